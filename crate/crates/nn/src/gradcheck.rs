//! Central finite-difference checks of parameter gradients.

use crate::param::{ParamId, ParamStore};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// One loss evaluation, optionally tagged with the
/// [`kink_signature`](crate::Graph::kink_signature) of its graph.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Evaluation {
    pub loss: f64,
    pub signature: Option<u64>,
}

impl From<f64> for Evaluation {
    fn from(loss: f64) -> Self {
        Evaluation { loss, signature: None }
    }
}

impl From<(f64, u64)> for Evaluation {
    fn from((loss, signature): (f64, u64)) -> Self {
        Evaluation { loss, signature: Some(signature) }
    }
}

#[derive(Debug, Clone, Default)]
pub struct GradCheckReport {
    pub checked: usize,
    /// Coordinates whose ±ε probes crossed a ReLU or max-pool kink; the
    /// central difference is meaningless there, so they are not compared.
    pub skipped: usize,
    pub max_rel_err: f64,
    /// `name[index]: analytic vs numeric` for coordinates over tolerance.
    pub failures: Vec<String>,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.failures.is_empty()
    }

    pub fn merge(&mut self, other: GradCheckReport) {
        self.checked += other.checked;
        self.skipped += other.skipped;
        self.max_rel_err = self.max_rel_err.max(other.max_rel_err);
        self.failures.extend(other.failures);
    }
}

/// `|a − n| / max(|a|, |n|, 1e-6)`
pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6)
}

/// Compares analytic gradients against `(L(θ+ε) − L(θ−ε)) / 2ε` at the
/// given coordinates. `loss(store, backward)` evaluates the scalar loss and,
/// when `backward` is set, accumulates its gradients into `store`. When the
/// evaluations carry signatures, coordinates whose probes land on a
/// different smooth piece than the unperturbed point are skipped.
pub fn check_coordinates<F, E>(store: &mut ParamStore<f64>, mut loss: F, coords: &[(ParamId, usize)], eps: f64, tol: f64) -> GradCheckReport
where
    F: FnMut(&mut ParamStore<f64>, bool) -> E,
    E: Into<Evaluation>,
{
    store.zero_grads();
    let base = loss(store, true).into().signature;
    let analytic: Vec<f64> = coords.iter().map(|&(id, c)| store.param(id).grad.data()[c]).collect();
    let mut report = GradCheckReport::default();
    for (&(id, c), &a) in coords.iter().zip(&analytic) {
        let orig = store.param(id).value.data()[c];
        store.param_mut(id).value.data_mut()[c] = orig + eps;
        let up: Evaluation = loss(store, false).into();
        store.param_mut(id).value.data_mut()[c] = orig - eps;
        let down: Evaluation = loss(store, false).into();
        store.param_mut(id).value.data_mut()[c] = orig;
        if up.signature != base || down.signature != base {
            report.skipped += 1;
            continue;
        }
        let numeric = (up.loss - down.loss) / (2.0 * eps);
        let err = rel_err(a, numeric);
        report.checked += 1;
        report.max_rel_err = report.max_rel_err.max(err);
        if !(err <= tol) {
            report.failures.push(format!("{}[{c}]: analytic {a} numeric {numeric} rel err {err:.2e}", store.param(id).name));
        }
    }
    report
}

/// Every coordinate of small parameters, `per_param` random ones of larger.
pub fn sample_per_param(store: &ParamStore<f64>, per_param: usize, seed: u64) -> Vec<(ParamId, usize)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut coords = Vec::new();
    for (id, p) in store.param_ids().zip(store.params()) {
        let n = p.value.numel();
        if n <= per_param {
            coords.extend((0..n).map(|c| (id, c)));
        } else {
            coords.extend((0..per_param).map(|_| (id, rng.random_range(0..n))));
        }
    }
    coords
}

/// `count` coordinates drawn uniformly over parameter tensors, then over
/// entries.
pub fn sample_uniform(store: &ParamStore<f64>, count: usize, seed: u64) -> Vec<(ParamId, usize)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ids: Vec<ParamId> = store.param_ids().collect();
    (0..count)
        .map(|_| {
            let id = ids[rng.random_range(0..ids.len())];
            (id, rng.random_range(0..store.param(id).value.numel()))
        })
        .collect()
}
