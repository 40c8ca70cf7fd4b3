//! Points grouped into likelihood cells.
//!
//! All points sharing (server, receiver, bucket, court) have the same win
//! probability, so the Bernoulli likelihood only needs per-cell win counts.
//! In the model without a court effect the court is not part of the key.

use std::collections::BTreeMap;

use crate::data::{Dataset, N_BUCKETS};
use crate::model::ModelConfig;

#[derive(Debug, Clone)]
pub struct CellTable {
    /// Server slot of each cell.
    pub slot: Vec<u32>,
    /// Bucket index `x - 1`.
    pub bucket: Vec<u8>,
    /// Alpha index of the server and of the receiver.
    pub server_alpha: Vec<u32>,
    pub receiver_alpha: Vec<u32>,
    pub wins: Vec<f64>,
    pub trials: Vec<f64>,
    /// Cells of each server slot form a contiguous range.
    pub slot_range: Vec<std::ops::Range<usize>>,
    /// Cells mentioning each alpha index (as server or receiver).
    pub by_alpha: Vec<Vec<u32>>,
    /// Cell of every point, in dataset order.
    pub point_cell: Vec<u32>,
}

impl CellTable {
    pub fn new(config: &ModelConfig, dataset: &Dataset) -> CellTable {
        let court_key = |c: crate::data::Court| if config.court_effect { c.index() } else { 0 };
        let mut map: BTreeMap<(usize, usize, u8, usize), (f64, f64, u32)> = BTreeMap::new();
        for p in dataset.points() {
            let slot = dataset.server_slot(p.server).expect("validated dataset");
            let key = (slot, p.receiver, p.x - 1, court_key(p.court));
            let next = map.len() as u32;
            let e = map.entry(key).or_insert((0.0, 0.0, next));
            e.0 += p.y as u8 as f64;
            e.1 += 1.0;
        }
        let n_alpha = config.n_alpha(dataset.n_players());
        let mut t = CellTable {
            slot: Vec::with_capacity(map.len()),
            bucket: Vec::with_capacity(map.len()),
            server_alpha: Vec::with_capacity(map.len()),
            receiver_alpha: Vec::with_capacity(map.len()),
            wins: Vec::with_capacity(map.len()),
            trials: Vec::with_capacity(map.len()),
            slot_range: vec![0..0; dataset.n_servers()],
            by_alpha: vec![Vec::new(); n_alpha],
            point_cell: Vec::with_capacity(dataset.points().len()),
        };
        // insertion order -> sorted position
        let mut position = vec![0u32; map.len()];
        for (pos, (&(slot, receiver, b, c), &(w, n, ins))) in map.iter().enumerate() {
            position[ins as usize] = pos as u32;
            let server = dataset.servers()[slot];
            let (sa, ra) = if config.court_effect {
                (3 * server + c, 3 * receiver + c)
            } else {
                (server, receiver)
            };
            t.slot.push(slot as u32);
            t.bucket.push(b);
            t.server_alpha.push(sa as u32);
            t.receiver_alpha.push(ra as u32);
            t.wins.push(w);
            t.trials.push(n);
            t.by_alpha[sa].push(pos as u32);
            if ra != sa {
                t.by_alpha[ra].push(pos as u32);
            }
            let r = &mut t.slot_range[slot];
            if r.start == r.end {
                *r = pos..pos + 1;
            } else {
                r.end = pos + 1;
            }
        }
        for p in dataset.points() {
            let slot = dataset.server_slot(p.server).expect("validated dataset");
            let key = (slot, p.receiver, p.x - 1, court_key(p.court));
            t.point_cell.push(position[map[&key].2 as usize]);
        }
        debug_assert!(t.bucket.iter().all(|&b| (b as usize) < N_BUCKETS));
        t
    }

    pub fn len(&self) -> usize {
        self.slot.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slot.is_empty()
    }

    /// `wins * eta - trials * softplus(eta)`, the cell's Bernoulli log-likelihood.
    #[inline]
    pub fn loglik(&self, cell: usize, eta: f64) -> f64 {
        self.wins[cell] * eta - self.trials[cell] * crate::model::softplus(eta)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{AggregatedPoint, Court};
    use crate::model::Variant;
    use crate::splines::SplineSpec;

    #[test]
    fn groups_points() {
        let pts = vec![
            AggregatedPoint { server: 1, receiver: 0, x: 2, y: true, court: Court::Clay },
            AggregatedPoint { server: 1, receiver: 0, x: 2, y: false, court: Court::Hard },
            AggregatedPoint { server: 0, receiver: 1, x: 1, y: true, court: Court::Clay },
        ];
        let d = Dataset::from_parts(vec!["a".into(), "b".into()], vec![0, 1], pts).unwrap();
        let base = ModelConfig::new(SplineSpec::tennis_default(), Variant::Partial, false);
        let t = CellTable::new(&base, &d);
        assert_eq!(t.len(), 2);
        assert_eq!(t.slot_range, vec![0..1, 1..2]);
        assert_eq!((t.wins[1], t.trials[1]), (1.0, 2.0));
        assert_eq!(t.point_cell, vec![1, 1, 0]);
        assert_eq!(t.by_alpha[0], vec![0, 1]);

        let court = ModelConfig::new(SplineSpec::tennis_default(), Variant::Partial, true);
        let t = CellTable::new(&court, &d);
        assert_eq!(t.len(), 3);
        assert_eq!(t.point_cell, vec![1, 2, 0]);
        assert_eq!(t.server_alpha[2], 3 + 2);
        assert_eq!(t.receiver_alpha[2], 2);
    }
}
