//! Leaf-wise gradient boosting on L2 loss.

use crate::binning::{bin_features, BinnedDataset, FeatureBins};
use crate::bundle::{bundle_exclusive_features, BundledDataset};
use crate::config::GbdtConfig;
use crate::error::{GbdtError, Result};
use crate::model::{GbdtModel, StopReason, FORMAT_VERSION};
use crate::tree::{Node, RegressionTree};
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use roc_core::{DenseMatrix, Scalar};

/// `sign(g)·max(|g| − λ, 0)`
pub fn soft_threshold(g: f64, lambda: f64) -> f64 {
    g.signum() * (g.abs() - lambda).max(0.0)
}

/// Split gain on soft-thresholded gradient sums; hessians are counts.
pub fn split_gain(gl: f64, hl: f64, gr: f64, hr: f64, lambda: f64) -> f64 {
    let term = |g: f64, h: f64| {
        let s = soft_threshold(g, lambda);
        s * s / h
    };
    term(gl, hl) + term(gr, hr) - term(gl + gr, hl + hr)
}

/// Gains at or below this fraction of the children's score are rounding
/// noise, not structure.
const GAIN_TOLERANCE: f64 = 1e-10;

/// Candidate gains closer than this fraction of the leaf's score are ties.
const TIE_TOLERANCE: f64 = 1e-12;

fn admissible_gain(gl: f64, hl: f64, gr: f64, hr: f64, lambda: f64) -> Option<f64> {
    let term = |g: f64, h: f64| {
        let s = soft_threshold(g, lambda);
        s * s / h
    };
    let children = term(gl, hl) + term(gr, hr);
    let gain = children - term(gl + gr, hl + hr);
    (gain > GAIN_TOLERANCE * children).then_some(gain)
}

pub fn leaf_value(g: f64, h: f64, lambda: f64) -> f64 {
    -soft_threshold(g, lambda) / h
}

/// `⌈fraction · n⌉`, treating products within rounding noise of an integer
/// as that integer.
pub fn sample_size(fraction: f64, n: usize) -> usize {
    let x = fraction * n as f64;
    let k = if (x - x.round()).abs() < 1e-9 { x.round() } else { x.ceil() };
    (k as usize).clamp(1, n.max(1))
}

/// Held-out rows scored after every round for early stopping.
pub struct Validation<'a> {
    pub data: &'a BinnedDataset,
    pub y: &'a [f64],
}

#[derive(Debug, Clone, Copy)]
struct Candidate {
    feature: usize,
    threshold: u8,
    gain: f64,
    left_n: usize,
}

struct Leaf {
    node: usize,
    begin: usize,
    end: usize,
    depth: usize,
    hist: Option<Hist>,
    best: Option<Candidate>,
}

/// Gradient sums and counts per bundle bin, flattened.
#[derive(Clone)]
struct Hist {
    g: Vec<f64>,
    n: Vec<u32>,
}

impl Hist {
    fn sub(&self, other: &Hist) -> Hist {
        Hist {
            g: self.g.iter().zip(&other.g).map(|(a, b)| a - b).collect(),
            n: self.n.iter().zip(&other.n).map(|(a, b)| a - b).collect(),
        }
    }
}

struct Grower<'a> {
    data: &'a BinnedDataset,
    bundled: &'a BundledDataset,
    offsets: Vec<usize>,
    total_bins: usize,
    config: &'a GbdtConfig,
    grad: &'a [f64],
    feature_used: Vec<bool>,
    bundle_used: Vec<bool>,
}

impl Grower<'_> {
    fn build_hist(&self, rows: &[u32]) -> Hist {
        let mut h = Hist { g: vec![0.0; self.total_bins], n: vec![0; self.total_bins] };
        for (k, col) in self.bundled.bins.iter().enumerate() {
            if !self.bundle_used[k] {
                continue;
            }
            let off = self.offsets[k];
            let (hg, hn) = (&mut h.g[off..], &mut h.n[off..]);
            for &r in rows {
                let b = col[r as usize] as usize;
                hg[b] += self.grad[r as usize];
                hn[b] += 1;
            }
        }
        h
    }

    /// Best admissible split of a leaf; ties go to the lowest feature, then
    /// the lowest threshold.
    fn best_split(&self, hist: &Hist, sum_g: f64, count: usize, depth: usize) -> Option<Candidate> {
        let c = self.config;
        if c.max_depth > 0 && depth >= c.max_depth as usize {
            return None;
        }
        let min_n = c.min_data_in_leaf.max(1);
        if count < 2 * min_n {
            return None;
        }
        let mut best: Option<Candidate> = None;
        let tie = TIE_TOLERANCE * soft_threshold(sum_g, c.lambda_l1).powi(2) / count as f64;
        let mut g_f = Vec::new();
        let mut n_f = Vec::new();
        for (f, &(k, m)) in self.bundled.location.iter().enumerate() {
            if !self.feature_used[f] {
                continue;
            }
            let member = &self.bundled.bundles[k].members[m];
            let nb = member.num_bins;
            if nb < 2 {
                continue;
            }
            let off = self.offsets[k];
            g_f.clear();
            n_f.clear();
            g_f.resize(nb, 0.0);
            n_f.resize(nb, 0usize);
            let (mut rest_g, mut rest_n) = (sum_g, count);
            for b in 0..nb as u8 {
                if b == member.default_bin {
                    continue;
                }
                let idx = off + member.encode(b) as usize;
                g_f[b as usize] = hist.g[idx];
                n_f[b as usize] = hist.n[idx] as usize;
                rest_g -= hist.g[idx];
                rest_n -= hist.n[idx] as usize;
            }
            g_f[member.default_bin as usize] = rest_g;
            n_f[member.default_bin as usize] = rest_n;

            let (mut gl, mut nl) = (0.0, 0usize);
            for t in 0..nb - 1 {
                if n_f[t] == 0 {
                    // same partition as the previous threshold
                    continue;
                }
                gl += g_f[t];
                nl += n_f[t];
                let nr = count - nl;
                if nl < min_n || nr < min_n {
                    continue;
                }
                let (hl, hr) = (nl as f64, nr as f64);
                if hl < c.min_sum_hessian_in_leaf || hr < c.min_sum_hessian_in_leaf {
                    continue;
                }
                let Some(gain) = admissible_gain(gl, hl, sum_g - gl, hr, c.lambda_l1) else { continue };
                if best.is_none_or(|b| gain > b.gain + tie + TIE_TOLERANCE * b.gain) {
                    best = Some(Candidate { feature: f, threshold: t as u8, gain, left_n: nl });
                }
            }
        }
        best
    }

    fn grow(&self, rows: &mut [u32]) -> RegressionTree {
        let c = self.config;
        let sum_g: f64 = rows.iter().map(|&r| self.grad[r as usize]).sum();
        let n = rows.len();
        let mut tree = RegressionTree::leaf(leaf_value(sum_g, n as f64, c.lambda_l1), n);
        let hist = self.build_hist(rows);
        let best = self.best_split(&hist, sum_g, n, 0);
        let mut leaves = vec![Leaf { node: 0, begin: 0, end: n, depth: 0, hist: Some(hist), best }];
        let mut scratch: Vec<u32> = Vec::with_capacity(n);

        while leaves.len() < c.num_leaves {
            let mut pick: Option<usize> = None;
            for (i, leaf) in leaves.iter().enumerate() {
                if let Some(b) = leaf.best {
                    if pick.is_none_or(|p| b.gain > leaves[p].best.unwrap().gain) {
                        pick = Some(i);
                    }
                }
            }
            let Some(li) = pick else { break };
            let split = leaves[li].best.take().unwrap();
            let parent_hist = leaves[li].hist.take().unwrap();
            let Leaf { node, begin, end, depth, .. } = leaves[li];

            // stable partition of the leaf's rows
            let col = &self.data.bins[split.feature];
            scratch.clear();
            let seg = &mut rows[begin..end];
            let mut w = 0;
            for i in 0..seg.len() {
                let r = seg[i];
                if col[r as usize] <= split.threshold {
                    seg[w] = r;
                    w += 1;
                } else {
                    scratch.push(r);
                }
            }
            seg[w..].copy_from_slice(&scratch);
            debug_assert_eq!(w, split.left_n);
            let mid = begin + w;

            let lg: f64 = rows[begin..mid].iter().map(|&r| self.grad[r as usize]).sum();
            let rg: f64 = rows[mid..end].iter().map(|&r| self.grad[r as usize]).sum();
            let (ln, rn) = (mid - begin, end - mid);
            let left_node = tree.nodes.len();
            tree.nodes.push(Node::Leaf { value: leaf_value(lg, ln as f64, c.lambda_l1), count: ln });
            tree.nodes.push(Node::Leaf { value: leaf_value(rg, rn as f64, c.lambda_l1), count: rn });
            tree.nodes[node] = Node::Split {
                feature: split.feature,
                threshold_bin: split.threshold,
                threshold: self.data.features[split.feature].upper(split.threshold as usize),
                gain: split.gain,
                left: left_node,
                right: left_node + 1,
            };

            let (lh, rh) = if ln <= rn {
                let small = self.build_hist(&rows[begin..mid]);
                let large = parent_hist.sub(&small);
                (small, large)
            } else {
                let small = self.build_hist(&rows[mid..end]);
                let large = parent_hist.sub(&small);
                (large, small)
            };
            let lb = self.best_split(&lh, lg, ln, depth + 1);
            let rb = self.best_split(&rh, rg, rn, depth + 1);
            leaves[li] = Leaf { node: left_node, begin, end: mid, depth: depth + 1, hist: Some(lh), best: lb };
            leaves.push(Leaf { node: left_node + 1, begin: mid, end, depth: depth + 1, hist: Some(rh), best: rb });
        }
        tree
    }
}

fn l2(pred: &[f64], y: &[f64]) -> f64 {
    pred.iter().zip(y).map(|(p, t)| (p - t) * (p - t)).sum::<f64>() / y.len() as f64
}

fn choose(n: usize, k: usize, seed: u64) -> Vec<usize> {
    if k >= n {
        return (0..n).collect();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut idx = sample(&mut rng, n, k).into_vec();
    idx.sort_unstable();
    idx
}

/// Boosts on binned training rows. The returned model routes raw values
/// through `data`'s bin edges.
pub fn train_gbdt(data: &BinnedDataset, y: &[f64], config: &GbdtConfig, validation: Option<Validation<'_>>) -> Result<GbdtModel> {
    config.validate()?;
    let n = data.rows;
    if y.len() != n {
        return Err(GbdtError::TargetLength { rows: n, targets: y.len() });
    }
    if n == 0 || n < config.min_data_in_leaf {
        return Err(GbdtError::InsufficientData { have: n, need: config.min_data_in_leaf.max(1) });
    }
    if let Some(v) = &validation {
        if v.data.num_features() != data.num_features() {
            return Err(GbdtError::DimensionMismatch { expected: data.num_features(), got: v.data.num_features() });
        }
        if v.y.len() != v.data.rows {
            return Err(GbdtError::TargetLength { rows: v.data.rows, targets: v.y.len() });
        }
    }
    if let Some(&bad) = y.iter().find(|v| !v.is_finite()) {
        return Err(GbdtError::InvalidConfig(format!("non-finite target {bad}")));
    }

    let d = data.num_features();
    let bundled = if config.enable_bundle {
        bundle_exclusive_features(data, 0)
    } else {
        no_bundles(data)
    };
    let mut offsets = Vec::with_capacity(bundled.num_bundles());
    let mut total_bins = 0;
    for b in &bundled.bundles {
        offsets.push(total_bins);
        total_bins += b.num_bins;
    }

    let base_score = y.iter().sum::<f64>() / n as f64;
    let mut pred = vec![base_score; n];
    let mut grad = vec![0.0; n];
    let mut val_pred = validation.as_ref().map(|v| vec![base_score; v.data.rows]);
    let mut trees = Vec::new();
    let mut train_loss = Vec::new();
    let mut valid_loss = Vec::new();
    let mut best = (f64::INFINITY, 0usize);
    let mut stop = StopReason::MaxRounds;
    let bag_size = if config.bagging_freq > 0 { sample_size(config.bagging_fraction, n) } else { n };
    let feature_count = sample_size(config.feature_fraction, d.max(1)).min(d);
    let mut bag: Vec<usize> = (0..n).collect();

    for round in 0..config.num_rounds {
        for i in 0..n {
            grad[i] = pred[i] - y[i];
        }
        if config.bagging_freq > 0 && round % config.bagging_freq == 0 {
            bag = choose(n, bag_size, config.bagging_seed.wrapping_add(round as u64));
        }
        let mut feature_used = vec![false; d];
        for f in choose(d, feature_count, config.random_state.wrapping_add(round as u64)) {
            feature_used[f] = true;
        }
        let bundle_used =
            bundled.bundles.iter().map(|b| b.members.iter().any(|m| feature_used[m.feature])).collect();
        let grower = Grower {
            data,
            bundled: &bundled,
            offsets: offsets.clone(),
            total_bins,
            config,
            grad: &grad,
            feature_used,
            bundle_used,
        };
        let mut rows: Vec<u32> = bag.iter().map(|&i| i as u32).collect();
        let tree = grower.grow(&mut rows);
        if tree.nodes.len() == 1 {
            stop = StopReason::NoSplit;
            break;
        }
        let lr = config.learning_rate;
        for (i, p) in pred.iter_mut().enumerate() {
            *p += lr * tree.predict_binned(|f| data.bins[f][i]);
        }
        train_loss.push(l2(&pred, y));
        trees.push(tree);
        if let (Some(v), Some(vp)) = (&validation, val_pred.as_mut()) {
            let t = trees.last().unwrap();
            for (i, p) in vp.iter_mut().enumerate() {
                *p += lr * t.predict_binned(|f| v.data.bins[f][i]);
            }
            let loss = l2(vp, v.y);
            valid_loss.push(loss);
            if loss < best.0 {
                best = (loss, trees.len());
            } else if let Some(patience) = config.early_stopping_rounds {
                if trees.len() - best.1 >= patience {
                    stop = StopReason::EarlyStopping;
                    break;
                }
            }
        }
    }
    let best_iteration = if validation.is_some() && config.early_stopping_rounds.is_some() && !trees.is_empty() {
        trees.truncate(best.1);
        Some(best.1)
    } else {
        None
    };

    Ok(GbdtModel {
        format_version: FORMAT_VERSION,
        config: config.clone(),
        base_score,
        learning_rate: config.learning_rate,
        num_features: d,
        bin_edges: data.features.iter().map(|f| f.edges.clone()).collect(),
        trees,
        best_iteration,
        train_loss,
        valid_loss,
        stop_reason: stop,
        num_bundles: bundled.num_bundles(),
    })
}

fn no_bundles(data: &BinnedDataset) -> BundledDataset {
    use crate::bundle::{Bundle, Member};
    let bundles = data
        .features
        .iter()
        .enumerate()
        .map(|(f, fb)| Bundle {
            members: vec![Member { feature: f, default_bin: 0, num_bins: fb.num_bins(), offset: 1 }],
            num_bins: fb.num_bins(),
        })
        .collect::<Vec<_>>();
    // default bin 0 maps bin b>0 to b, so the column is unchanged
    BundledDataset { bundles, bins: data.bins.clone(), location: (0..data.num_features()).map(|f| (f, 0)).collect(), rows: data.rows }
}

/// Bins `x`, holds out the chronological tail for early stopping when
/// enabled, and boosts.
pub fn fit<T: Scalar>(x: &DenseMatrix<T>, y: &[f64], config: &GbdtConfig) -> Result<GbdtModel> {
    config.validate()?;
    if y.len() != x.rows() {
        return Err(GbdtError::TargetLength { rows: x.rows(), targets: y.len() });
    }
    let n = x.rows();
    let n_val = if config.early_stopping_rounds.is_some() { (n as f64 * config.validation_fraction).floor() as usize } else { 0 };
    let n_fit = n - n_val;
    if n_val == 0 || n_fit < config.min_data_in_leaf.max(1) {
        let data = bin_features(x, config.max_bins)?;
        return train_gbdt(&data, y, config, None);
    }
    let fit_rows: Vec<usize> = (0..n_fit).collect();
    let val_rows: Vec<usize> = (n_fit..n).collect();
    let data = bin_features(&x.select_rows(&fit_rows), config.max_bins)?;
    let features: Vec<FeatureBins> = data.features.clone();
    let val = BinnedDataset::apply(features, &x.select_rows(&val_rows))?;
    train_gbdt(&data, &y[..n_fit], config, Some(Validation { data: &val, y: &y[n_fit..] }))
}
