use std::cmp::Ordering;
use std::collections::BinaryHeap;

/// A result entry. Lists are ordered by descending score, then ascending id.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScoredObject {
    pub object_id: u64,
    pub score: f64,
}

impl ScoredObject {
    /// `Less` means `self` ranks ahead of `other`.
    pub fn rank_cmp(&self, other: &Self) -> Ordering {
        other
            .score
            .total_cmp(&self.score)
            .then(self.object_id.cmp(&other.object_id))
    }
}

/// Heap entry whose maximum is the currently worst-ranked kept item.
#[derive(Debug, Clone, Copy, PartialEq)]
struct Worst(ScoredObject);

impl Eq for Worst {}

impl PartialOrd for Worst {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Worst {
    fn cmp(&self, other: &Self) -> Ordering {
        self.0.rank_cmp(&other.0)
    }
}

/// Bounded collector keeping the `k` best-ranked entries.
#[derive(Debug, Clone)]
pub struct TopK {
    k: usize,
    heap: BinaryHeap<Worst>,
}

impl TopK {
    pub fn new(k: usize) -> Self {
        Self {
            k,
            heap: BinaryHeap::with_capacity(k.saturating_add(1).min(1 << 16)),
        }
    }

    #[inline]
    pub fn push(&mut self, object_id: u64, score: f64) {
        if self.k == 0 {
            return;
        }
        let item = Worst(ScoredObject { object_id, score });
        if self.heap.len() < self.k {
            self.heap.push(item);
        } else if let Some(mut top) = self.heap.peek_mut() {
            if item < *top {
                *top = item;
            }
        }
    }

    /// Kept entries, best first.
    pub fn into_sorted(self) -> Vec<ScoredObject> {
        let mut v: Vec<ScoredObject> = self.heap.into_iter().map(|w| w.0).collect();
        v.sort_by(ScoredObject::rank_cmp);
        v
    }
}

/// Best `k` of `items` in rank order.
pub fn top_k(items: impl IntoIterator<Item = (u64, f64)>, k: usize) -> Vec<ScoredObject> {
    let mut t = TopK::new(k);
    for (id, s) in items {
        t.push(id, s);
    }
    t.into_sorted()
}
