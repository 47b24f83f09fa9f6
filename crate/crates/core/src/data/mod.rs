//! Synthetic dataset generation and the on-disk dataset format.

mod io;
mod synth;

pub use io::{
    read_dataset, read_embeddings, write_dataset, write_embeddings, DATASET_FILES, EMB_MAGIC, OBJECTS_TSV,
    OBJECT_EMB, QUERIES_TSV, QUERY_EMB, RECORDS_TSV,
};
pub use synth::{
    generate, generate_planted, DecayKind, PlantedTopic, SynthConfig, TopicLabels, LAT_RANGE, LON_RANGE,
};
