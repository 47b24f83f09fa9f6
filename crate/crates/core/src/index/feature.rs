use crate::domain::{dot, Bounds, GeoPoint};

/// Classifier input: the unit-normalised embedding followed by the
/// min-max-scaled latitude and longitude.
#[derive(Debug, Clone, PartialEq)]
pub struct IndexFeature {
    pub x: Vec<f64>,
    /// Set when the embedding had zero norm and was left unnormalised.
    pub zero_embedding: bool,
}

impl IndexFeature {
    pub fn dim(&self) -> usize {
        self.x.len()
    }
}

/// Min-max scaling into `[0, 1]`; a degenerate axis maps to 0.5.
#[inline]
pub(crate) fn scale_coord(v: f64, lo: f64, hi: f64) -> f64 {
    let span = hi - lo;
    if span > 0.0 {
        ((v - lo) / span).clamp(0.0, 1.0)
    } else {
        0.5
    }
}

/// Normalised `(lat̂, lon̂)` of `loc` within `bounds`.
#[inline]
pub(crate) fn scaled_loc(loc: &GeoPoint, bounds: &Bounds) -> (f64, f64) {
    (
        scale_coord(loc.lat, bounds.lat_min, bounds.lat_max),
        scale_coord(loc.lon, bounds.lon_min, bounds.lon_max),
    )
}

/// Writes the feature into `out` (length `emb.len() + 2`) and returns
/// whether the embedding was zero.
pub(crate) fn write_feature(emb: &[f64], loc: &GeoPoint, bounds: &Bounds, out: &mut [f64]) -> bool {
    let d = emb.len();
    debug_assert_eq!(out.len(), d + 2);
    let norm = dot(emb, emb).sqrt();
    let zero = !(norm > 0.0);
    for (o, &e) in out[..d].iter_mut().zip(emb) {
        *o = if zero { e } else { e / norm };
    }
    let (lat, lon) = scaled_loc(loc, bounds);
    out[d] = lat;
    out[d + 1] = lon;
    zero
}

pub fn build_feature(emb: &[f64], loc: &GeoPoint, bounds: &Bounds) -> IndexFeature {
    let mut x = vec![0.0; emb.len() + 2];
    let zero_embedding = write_feature(emb, loc, bounds, &mut x);
    IndexFeature { x, zero_embedding }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bounds() -> Bounds {
        Bounds {
            lat_min: 39.0,
            lat_max: 41.0,
            lon_min: 116.0,
            lon_max: 117.0,
        }
    }

    #[test]
    fn endpoints_and_midpoint() {
        let b = bounds();
        let lo = build_feature(&[3.0, 4.0], &GeoPoint::new(39.0, 116.0), &b);
        assert_eq!(lo.x, vec![0.6, 0.8, 0.0, 0.0]);
        assert!(!lo.zero_embedding);
        let hi = build_feature(&[3.0, 4.0], &GeoPoint::new(41.0, 117.0), &b);
        assert_eq!(&hi.x[2..], &[1.0, 1.0]);
        let mid = build_feature(&[1.0, 0.0], &GeoPoint::new(40.0, 116.5), &b);
        assert_eq!(&mid.x[2..], &[0.5, 0.5]);
    }

    #[test]
    fn out_of_bounds_clamped_and_degenerate_axis() {
        let f = build_feature(&[1.0], &GeoPoint::new(45.0, 100.0), &bounds());
        assert_eq!(&f.x[1..], &[1.0, 0.0]);
        let flat = Bounds {
            lat_min: 1.0,
            lat_max: 1.0,
            lon_min: 0.0,
            lon_max: 2.0,
        };
        assert_eq!(build_feature(&[1.0], &GeoPoint::new(1.0, 1.0), &flat).x, vec![1.0, 0.5, 0.5]);
    }

    #[test]
    fn zero_embedding_flagged() {
        let f = build_feature(&[0.0, 0.0], &GeoPoint::new(40.0, 116.5), &bounds());
        assert!(f.zero_embedding);
        assert_eq!(f.x, vec![0.0, 0.0, 0.5, 0.5]);
    }

    proptest::proptest! {
        #[test]
        fn unit_norm_and_unit_box(
            emb in proptest::collection::vec(-10.0f64..10.0, 1..16),
            lat in -90.0f64..90.0,
            lon in -180.0f64..180.0,
        ) {
            let f = build_feature(&emb, &GeoPoint::new(lat, lon), &bounds());
            let d = emb.len();
            if !f.zero_embedding {
                let n = dot(&f.x[..d], &f.x[..d]).sqrt();
                proptest::prop_assert!((n - 1.0).abs() < 1e-12);
            }
            proptest::prop_assert!(f.x[d..].iter().all(|v| (0.0..=1.0).contains(v)));
        }
    }
}
