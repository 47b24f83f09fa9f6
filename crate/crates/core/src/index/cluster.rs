use std::collections::HashMap;

use crate::domain::{Bounds, Embedding, GeoObject, GeoPoint};
use crate::error::{Error, Result};
use crate::index::classifier::{top_clusters, ClusterClassifier};
use crate::index::feature::write_feature;
use crate::par::{self, Parallelism};
use crate::search::KMeansModel;

/// Row-major copy of the indexed objects, addressed by slot.
#[derive(Debug, Clone, PartialEq)]
pub struct ObjectStore {
    dim: usize,
    ids: Vec<u64>,
    locs: Vec<GeoPoint>,
    embs: Vec<f64>,
    slot_of: HashMap<u64, usize>,
}

impl ObjectStore {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            ids: Vec::new(),
            locs: Vec::new(),
            embs: Vec::new(),
            slot_of: HashMap::new(),
        }
    }

    pub fn from_objects(dim: usize, objects: &[GeoObject]) -> Result<Self> {
        let mut s = Self::new(dim);
        s.ids.reserve(objects.len());
        s.locs.reserve(objects.len());
        s.embs.reserve(objects.len() * dim);
        for o in objects {
            s.push(o)?;
        }
        Ok(s)
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn id(&self, slot: usize) -> u64 {
        self.ids[slot]
    }

    #[inline]
    pub fn loc(&self, slot: usize) -> &GeoPoint {
        &self.locs[slot]
    }

    #[inline]
    pub fn emb(&self, slot: usize) -> &[f64] {
        &self.embs[slot * self.dim..(slot + 1) * self.dim]
    }

    pub fn slot(&self, id: u64) -> Option<usize> {
        self.slot_of.get(&id).copied()
    }

    pub fn contains(&self, id: u64) -> bool {
        self.slot_of.contains_key(&id)
    }

    pub fn get(&self, id: u64) -> Option<GeoObject> {
        let s = self.slot(id)?;
        Some(GeoObject {
            id,
            loc: self.locs[s],
            emb: Embedding::new(self.emb(s).to_vec()).expect("stored embeddings are valid"),
        })
    }

    fn push(&mut self, o: &GeoObject) -> Result<usize> {
        Error::check_dim(self.dim, o.emb.dim())?;
        o.loc.validate()?;
        if self.slot_of.contains_key(&o.id) {
            return Err(Error::DuplicateId(o.id));
        }
        let slot = self.ids.len();
        self.ids.push(o.id);
        self.locs.push(o.loc);
        self.embs.extend_from_slice(o.emb.as_slice());
        self.slot_of.insert(o.id, slot);
        Ok(slot)
    }

    /// Removes `slot` by moving the last row into it. Returns the id of the
    /// moved object, if any.
    fn swap_remove(&mut self, slot: usize) -> Option<u64> {
        let last = self.ids.len() - 1;
        let removed = self.ids.swap_remove(slot);
        self.locs.swap_remove(slot);
        if slot != last {
            let (head, tail) = self.embs.split_at_mut(last * self.dim);
            head[slot * self.dim..(slot + 1) * self.dim].copy_from_slice(&tail[..self.dim]);
        }
        self.embs.truncate(last * self.dim);
        self.slot_of.remove(&removed);
        if slot != last {
            let moved = self.ids[slot];
            self.slot_of.insert(moved, slot);
            Some(moved)
        } else {
            None
        }
    }
}

/// How queries and objects are mapped to clusters.
#[derive(Debug, Clone, PartialEq)]
pub enum Router {
    /// The trained cluster classifier.
    Learned(ClusterClassifier),
    /// Nearest k-means centroids (IVF baselines).
    KMeans(KMeansModel),
}

impl Router {
    pub fn num_clusters(&self) -> usize {
        match self {
            Router::Learned(c) => c.num_clusters(),
            Router::KMeans(k) => k.num_clusters(),
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            Router::Learned(c) => c.dim(),
            Router::KMeans(k) => k.dim(),
        }
    }

    /// The `cr` best clusters for a point, best first.
    pub fn rank(&self, emb: &[f64], loc: &GeoPoint, bounds: &Bounds, cr: usize) -> Result<Vec<usize>> {
        Error::check_dim(self.dim(), emb.len())?;
        match self {
            Router::Learned(clf) => {
                let mut x = vec![0.0; emb.len() + 2];
                write_feature(emb, loc, bounds, &mut x);
                Ok(top_clusters(&clf.classify(&x)?, cr))
            }
            Router::KMeans(km) => Ok(km.nearest(&km.feature(emb, loc), cr)),
        }
    }
}

/// Inverted lists of object ids over `c` clusters, with the object store
/// and the router that produced them.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterIndex {
    lists: Vec<Vec<u64>>,
    slots: Vec<Vec<u32>>,
    multiplicity: usize,
    bounds: Bounds,
    router: Router,
    store: ObjectStore,
}

impl ClusterIndex {
    /// Assigns every object to its top-`multiplicity` clusters.
    pub fn build(
        objects: &[GeoObject],
        bounds: Bounds,
        router: Router,
        multiplicity: usize,
        mode: Parallelism,
    ) -> Result<Self> {
        let c = router.num_clusters();
        check_cr("multiplicity", multiplicity, c)?;
        let store = ObjectStore::from_objects(router.dim(), objects)?;
        if store.len() > u32::MAX as usize {
            return Err(Error::OutOfRange(format!("{} objects exceed the index capacity", store.len())));
        }
        let assignments: Vec<Vec<usize>> = par::map_range(mode, store.len(), |s| {
            router.rank(store.emb(s), store.loc(s), &bounds, multiplicity)
        })
        .into_iter()
        .collect::<Result<_>>()?;
        let mut lists = vec![Vec::new(); c];
        let mut slots = vec![Vec::new(); c];
        for (s, clusters) in assignments.iter().enumerate() {
            for &ci in clusters {
                lists[ci].push(store.id(s));
                slots[ci].push(s as u32);
            }
        }
        Ok(Self {
            lists,
            slots,
            multiplicity,
            bounds,
            router,
            store,
        })
    }

    /// Reassembles an index from stored lists, checking that every object
    /// appears in exactly `multiplicity` distinct lists.
    pub fn from_lists(
        objects: &[GeoObject],
        bounds: Bounds,
        router: Router,
        multiplicity: usize,
        lists: Vec<Vec<u64>>,
    ) -> Result<Self> {
        let c = router.num_clusters();
        check_cr("multiplicity", multiplicity, c)?;
        Error::check_dim(c, lists.len())?;
        let store = ObjectStore::from_objects(router.dim(), objects)?;
        let mut seen = vec![0usize; store.len()];
        let mut slots = Vec::with_capacity(c);
        for list in &lists {
            let mut sl = Vec::with_capacity(list.len());
            for &id in list {
                let s = store.slot(id).ok_or(Error::UnknownId(id))?;
                sl.push(s as u32);
                seen[s] += 1;
            }
            let mut check = sl.clone();
            check.sort_unstable();
            if check.windows(2).any(|w| w[0] == w[1]) {
                return Err(Error::InvalidDataset("an id appears twice in one list".into()));
            }
            slots.push(sl);
        }
        if let Some(s) = seen.iter().position(|&k| k != multiplicity) {
            return Err(Error::InvalidDataset(format!(
                "object {} appears in {} lists, expected {multiplicity}",
                store.id(s),
                seen[s]
            )));
        }
        Ok(Self {
            lists,
            slots,
            multiplicity,
            bounds,
            router,
            store,
        })
    }

    pub fn num_clusters(&self) -> usize {
        self.lists.len()
    }

    pub fn multiplicity(&self) -> usize {
        self.multiplicity
    }

    pub fn lists(&self) -> &[Vec<u64>] {
        &self.lists
    }

    pub fn list(&self, cluster: usize) -> &[u64] {
        &self.lists[cluster]
    }

    pub fn cluster_sizes(&self) -> Vec<usize> {
        self.lists.iter().map(Vec::len).collect()
    }

    pub fn bounds(&self) -> &Bounds {
        &self.bounds
    }

    pub fn router(&self) -> &Router {
        &self.router
    }

    pub fn store(&self) -> &ObjectStore {
        &self.store
    }

    pub fn len(&self) -> usize {
        self.store.len()
    }

    pub fn is_empty(&self) -> bool {
        self.store.is_empty()
    }

    /// The `cr` most probable (or nearest) clusters for a query point.
    pub fn route(&self, emb: &[f64], loc: &GeoPoint, cr: usize) -> Result<Vec<usize>> {
        check_cr("cr", cr, self.num_clusters())?;
        self.router.rank(emb, loc, &self.bounds, cr)
    }

    /// Store slots of the union of `clusters`' lists, each slot once.
    pub fn candidate_slots(&self, clusters: &[usize]) -> Vec<u32> {
        let total: usize = clusters.iter().map(|&c| self.slots[c].len()).sum();
        let mut out = Vec::with_capacity(total);
        for &c in clusters {
            out.extend_from_slice(&self.slots[c]);
        }
        if self.multiplicity > 1 && clusters.len() > 1 {
            out.sort_unstable();
            out.dedup();
        }
        out
    }

    /// Classifies `o` and appends it to its top-`multiplicity` lists.
    pub fn insert(&mut self, o: &GeoObject) -> Result<Vec<usize>> {
        if self.store.contains(o.id) {
            return Err(Error::DuplicateId(o.id));
        }
        Error::check_dim(self.store.dim(), o.emb.dim())?;
        let clusters = self
            .router
            .rank(o.emb.as_slice(), &o.loc, &self.bounds, self.multiplicity)?;
        let slot = self.store.push(o)?;
        let slot = u32::try_from(slot).map_err(|_| Error::OutOfRange("index capacity exceeded".into()))?;
        for &c in &clusters {
            self.lists[c].push(o.id);
            self.slots[c].push(slot);
        }
        Ok(clusters)
    }

    /// Removes `id` from every list and from the store.
    pub fn delete(&mut self, id: u64) -> Result<()> {
        let slot = self.store.slot(id).ok_or(Error::UnknownId(id))?;
        for (list, slots) in self.lists.iter_mut().zip(&mut self.slots) {
            if let Some(p) = list.iter().position(|&x| x == id) {
                list.remove(p);
                slots.remove(p);
            }
        }
        if let Some(moved) = self.store.swap_remove(slot) {
            for (list, slots) in self.lists.iter().zip(&mut self.slots) {
                for (x, s) in list.iter().zip(slots.iter_mut()) {
                    if *x == moved {
                        *s = slot as u32;
                    }
                }
            }
        }
        Ok(())
    }
}

fn check_cr(name: &str, v: usize, c: usize) -> Result<()> {
    if v == 0 || v > c {
        return Err(Error::OutOfRange(format!("{name} = {v} must be in [1, {c}]")));
    }
    Ok(())
}

/// Partitions the dataset's objects with `clf`; each object goes to its
/// top-`multiplicity` clusters, ties to the lowest cluster id.
pub fn partition(
    dataset: &crate::domain::Dataset,
    clf: ClusterClassifier,
    multiplicity: usize,
    mode: Parallelism,
) -> Result<ClusterIndex> {
    Error::check_dim(dataset.dim(), clf.dim())?;
    ClusterIndex::build(&dataset.objects, dataset.bounds, Router::Learned(clf), multiplicity, mode)
}
