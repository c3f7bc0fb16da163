//! Exclusive feature bundling: features whose non-default rows never
//! overlap share one histogram column.

use crate::binning::BinnedDataset;
use crate::config::MAX_BINS_LIMIT;

/// One original feature inside a bundle. Its non-default bins occupy bundle
/// bins `offset .. offset + num_bins - 1`; bundle bin 0 means every member
/// sits at its default bin.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Member {
    pub feature: usize,
    pub default_bin: u8,
    pub num_bins: usize,
    pub offset: usize,
}

impl Member {
    pub fn encode(&self, bin: u8) -> u8 {
        if bin == self.default_bin {
            return 0;
        }
        let rank = if bin < self.default_bin { bin as usize } else { bin as usize - 1 };
        (self.offset + rank) as u8
    }

    /// The original bin for a bundle bin owned by this member.
    pub fn decode(&self, bundle_bin: u8) -> u8 {
        let rank = bundle_bin as usize - self.offset;
        if rank < self.default_bin as usize {
            rank as u8
        } else {
            rank as u8 + 1
        }
    }

    pub fn owns(&self, bundle_bin: u8) -> bool {
        let b = bundle_bin as usize;
        b >= self.offset && b < self.offset + self.num_bins - 1
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Bundle {
    pub members: Vec<Member>,
    pub num_bins: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BundledDataset {
    pub bundles: Vec<Bundle>,
    /// `bins[k][i]`: bundle bin of row `i` in bundle `k`.
    pub bins: Vec<Vec<u8>>,
    /// `(bundle, member)` position of each original feature.
    pub location: Vec<(usize, usize)>,
    pub rows: usize,
}

struct Support {
    words: Vec<u64>,
    count: usize,
}

impl Support {
    fn new(rows: usize) -> Self {
        Support { words: vec![0; rows.div_ceil(64)], count: 0 }
    }

    fn of(col: &[u8], default_bin: u8) -> Self {
        let mut s = Support::new(col.len());
        for (i, &b) in col.iter().enumerate() {
            if b != default_bin {
                s.words[i / 64] |= 1 << (i % 64);
                s.count += 1;
            }
        }
        s
    }

    fn overlap(&self, other: &Support) -> usize {
        self.words.iter().zip(&other.words).map(|(a, b)| (a & b).count_ones() as usize).sum()
    }

    fn merge(&mut self, other: &Support) {
        for (a, b) in self.words.iter_mut().zip(&other.words) {
            *a |= b;
        }
        self.count = self.words.iter().map(|w| w.count_ones() as usize).sum();
    }
}

/// Greedy bundling in order of decreasing non-default count. A feature
/// joins the first bundle where it adds at most `conflict_budget`
/// overlapping rows (in total per bundle) and the bundle still fits in
/// `u8` bins. With a zero budget the encoding is lossless.
pub fn bundle_exclusive_features(data: &BinnedDataset, conflict_budget: usize) -> BundledDataset {
    let d = data.num_features();
    let n = data.rows;
    let defaults: Vec<u8> = data.features.iter().map(|f| f.bin(0.0)).collect();
    let supports: Vec<Support> = (0..d).map(|f| Support::of(&data.bins[f], defaults[f])).collect();
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| supports[b].count.cmp(&supports[a].count).then(a.cmp(&b)));

    struct Open {
        members: Vec<usize>,
        support: Support,
        bins: usize,
        conflicts: usize,
    }
    let mut open: Vec<Open> = Vec::new();
    for f in order {
        let extra = data.features[f].num_bins() - 1;
        let s = &supports[f];
        let slot = open.iter().position(|b| {
            if b.bins + extra > MAX_BINS_LIMIT {
                return false;
            }
            let room = conflict_budget - b.conflicts;
            // pigeonhole lower bound before the exact count
            if (b.support.count + s.count).saturating_sub(n) > room {
                return false;
            }
            b.support.overlap(s) <= room
        });
        match slot {
            Some(k) => {
                let b = &mut open[k];
                b.conflicts += b.support.overlap(s);
                b.support.merge(s);
                b.members.push(f);
                b.bins += extra;
            }
            None => {
                let mut support = Support::new(n);
                support.merge(s);
                open.push(Open { members: vec![f], support, bins: 1 + extra, conflicts: 0 });
            }
        }
    }

    let mut location = vec![(0, 0); d];
    let mut bundles = Vec::with_capacity(open.len());
    let mut bins = Vec::with_capacity(open.len());
    for (k, ob) in open.into_iter().enumerate() {
        let mut offset = 1;
        let mut members = Vec::with_capacity(ob.members.len());
        for (m, &f) in ob.members.iter().enumerate() {
            let nb = data.features[f].num_bins();
            members.push(Member { feature: f, default_bin: defaults[f], num_bins: nb, offset });
            offset += nb - 1;
            location[f] = (k, m);
        }
        let mut col = vec![0u8; n];
        for m in &members {
            for (dst, &b) in col.iter_mut().zip(&data.bins[m.feature]) {
                if *dst == 0 {
                    *dst = m.encode(b);
                }
            }
        }
        bins.push(col);
        bundles.push(Bundle { members, num_bins: offset });
    }
    BundledDataset { bundles, bins, location, rows: n }
}

impl BundledDataset {
    /// Original per-feature bin columns.
    pub fn unbundle(&self) -> Vec<Vec<u8>> {
        let d = self.location.len();
        let mut out = vec![Vec::new(); d];
        for (bundle, col) in self.bundles.iter().zip(&self.bins) {
            for m in &bundle.members {
                out[m.feature] = col.iter().map(|&v| if m.owns(v) { m.decode(v) } else { m.default_bin }).collect();
            }
        }
        out
    }

    pub fn num_bundles(&self) -> usize {
        self.bundles.len()
    }
}
