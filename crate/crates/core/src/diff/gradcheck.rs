use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{DiffError, ParamId, ParamStore, Tape, Var};

/// Denominator floor of the relative error, so coordinates whose true
/// gradient is ~0 are judged on absolute error instead.
pub const REL_ERROR_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckOptions {
    pub step: f64,
    pub tolerance: f64,
    /// Upper bound on the number of parameter entries probed.
    pub max_entries: usize,
    pub seed: u64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self { step: 1e-5, tolerance: 1e-4, max_entries: 200, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// Coordinates compared.
    pub checked: usize,
    /// Coordinates skipped because the ±step probes crossed a ReLU or max kink.
    pub skipped: usize,
    /// Worst coordinate as (parameter name, flat index, analytic, numeric).
    pub worst: Option<(String, usize, f64, f64)>,
    pub tolerance: f64,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.checked > 0 && self.max_rel_error < self.tolerance
    }
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_ERROR_FLOOR)
}

/// Compares reverse-mode gradients of a scalar loss against central finite
/// differences on a random subsample of the entries of `params`.
///
/// `loss_fn` must build the loss on the given tape from the given store; it
/// is called once per probe. A non-scalar loss is differentiated through its
/// sum.
pub fn grad_check<F>(
    store: &mut ParamStore,
    params: &[ParamId],
    options: GradCheckOptions,
    loss_fn: F,
) -> Result<GradCheckReport, DiffError>
where
    F: Fn(&ParamStore, &mut Tape) -> Result<Var, DiffError>,
{
    let eval = |store: &ParamStore| -> Result<(f64, u64), DiffError> {
        let mut tape = Tape::new();
        let loss = loss_fn(store, &mut tape)?;
        Ok((tape.value(loss).sum(), tape.kink_signature()))
    };

    let mut entries = Vec::new();
    for &p in params {
        for k in 0..store.value(p).len() {
            entries.push((p, k));
        }
    }
    if entries.is_empty() || options.max_entries == 0 {
        return Err(DiffError::EmptyCheck);
    }

    let mut tape = Tape::new();
    let loss = loss_fn(store, &mut tape)?;
    let base = tape.value(loss).sum();
    let grads = tape.backward(loss);
    let (again, _) = eval(store)?;
    if base.to_bits() != again.to_bits() {
        return Err(DiffError::NonDeterministicLoss { first: base, second: again });
    }

    let mut rng = ChaCha8Rng::seed_from_u64(options.seed);
    let amount = options.max_entries.min(entries.len());
    let mut picked: Vec<usize> = sample(&mut rng, entries.len(), amount).into_vec();
    picked.sort_unstable();

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        checked: 0,
        skipped: 0,
        worst: None,
        tolerance: options.tolerance,
    };
    for i in picked {
        let (p, k) = entries[i];
        let analytic = grads.param(p).map_or(0.0, |g| g.data()[k]);
        let original = store.value(p).data()[k];
        store.value_mut(p).data_mut()[k] = original + options.step;
        let plus = eval(store);
        store.value_mut(p).data_mut()[k] = original - options.step;
        let minus = eval(store);
        store.value_mut(p).data_mut()[k] = original;
        let ((lp, sp), (lm, sm)) = (plus?, minus?);
        if sp != sm {
            report.skipped += 1;
            continue;
        }
        let numeric = (lp - lm) / (2.0 * options.step);
        let err = relative_error(analytic, numeric);
        report.checked += 1;
        if err >= report.max_rel_error {
            report.max_rel_error = err;
            report.worst = Some((store.get(p).name.clone(), k, analytic, numeric));
        }
    }
    if report.checked == 0 {
        return Err(DiffError::EmptyCheck);
    }
    Ok(report)
}
