//! Central finite-difference verification of analytic gradients.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Tape, Var};
use crate::error::Result;
use crate::param::ParamStore;

/// Smallest step tried when a perturbation crosses a kink.
pub const MIN_STEP: f64 = 1e-7;

#[derive(Clone, Debug)]
pub struct GradCheckOptions {
    /// Central-difference step.
    pub step: f64,
    pub tolerance: f64,
    /// Check at most this many elements per parameter (`None`: all of them).
    pub max_elements: Option<usize>,
    /// Denominator floor, so gradients that vanish exactly compare rounding
    /// noise against this instead of against itself.
    pub magnitude_floor: f64,
    pub seed: u64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        GradCheckOptions {
            step: 1e-4,
            tolerance: 1e-4,
            max_elements: None,
            magnitude_floor: 1e-7,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug)]
pub struct ParamError {
    pub name: String,
    pub checked: usize,
    /// Elements whose perturbation crossed a kink at every step tried.
    pub skipped: usize,
    pub max_rel_error: f64,
}

#[derive(Clone, Debug)]
pub struct GradReport {
    pub params: Vec<ParamError>,
    pub tolerance: f64,
    /// Distance of the closest relu/abs/max-pool argument to its kink at the
    /// unperturbed point.
    pub kink_distance: f64,
}

impl GradReport {
    pub fn max_rel_error(&self) -> f64 {
        self.params.iter().map(|p| p.max_rel_error).fold(0.0, f64::max)
    }

    pub fn checked(&self) -> usize {
        self.params.iter().map(|p| p.checked).sum()
    }

    pub fn skipped(&self) -> usize {
        self.params.iter().map(|p| p.skipped).sum()
    }

    pub fn passed(&self) -> bool {
        self.max_rel_error() < self.tolerance && self.checked() > 0
    }
}

/// Compare analytic gradients of `loss_fn` with central differences for every
/// parameter in `store`.
///
/// The per-parameter error is
/// `max|analytic - numeric| / max(max|analytic|, max|numeric|, magnitude_floor)`.
/// A difference whose perturbed passes take another relu/abs/max-pool branch
/// than the unperturbed one is retried with the step divided by ten, down to
/// [`MIN_STEP`]; elements that still cross a kink are skipped.
pub fn finite_diff_check<F>(
    store: &mut ParamStore<f64>,
    loss_fn: F,
    opts: &GradCheckOptions,
) -> Result<GradReport>
where
    F: Fn(&mut Tape<f64>, &ParamStore<f64>) -> Result<Var>,
{
    store.zero_grad();
    let mut tape = Tape::new();
    let loss = loss_fn(&mut tape, store)?;
    let kink_distance = tape.kink_distance();
    let signature = tape.branch_signature();
    let grads = tape.backward(loss)?;
    store.accumulate(&tape, &grads);
    drop(tape);

    let eval = |s: &ParamStore<f64>| -> Result<(f64, u64)> {
        let mut t = Tape::new();
        let l = loss_fn(&mut t, s)?;
        Ok((t.value(l).data()[0], t.branch_signature()))
    };

    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let ids: Vec<_> = (0..store.len()).map(crate::param::ParamId).collect();
    let mut params = Vec::with_capacity(ids.len());
    for id in ids {
        let n = store.get(id).value.len();
        let elems: Vec<usize> = match opts.max_elements {
            Some(m) if m < n => {
                let mut v = sample(&mut rng, n, m).into_vec();
                v.sort_unstable();
                v
            }
            _ => (0..n).collect(),
        };
        let mut max_diff = 0.0f64;
        let mut max_mag = 0.0f64;
        let mut skipped = 0;
        for &e in &elems {
            let orig = store.get(id).value.data()[e];
            let mut step = opts.step;
            let numeric = loop {
                store.get_mut(id).value.data_mut()[e] = orig + step;
                let (plus, sp) = eval(store)?;
                store.get_mut(id).value.data_mut()[e] = orig - step;
                let (minus, sm) = eval(store)?;
                store.get_mut(id).value.data_mut()[e] = orig;
                if sp == signature && sm == signature {
                    break Some((plus - minus) / (2.0 * step));
                }
                step /= 10.0;
                if step < MIN_STEP {
                    break None;
                }
            };
            let Some(numeric) = numeric else {
                skipped += 1;
                continue;
            };
            let analytic = store.get(id).grad.data()[e];
            max_diff = max_diff.max((analytic - numeric).abs());
            max_mag = max_mag.max(analytic.abs()).max(numeric.abs());
        }
        let max_rel_error = max_diff / max_mag.max(opts.magnitude_floor);
        params.push(ParamError {
            name: store.get(id).name.clone(),
            checked: elems.len() - skipped,
            skipped,
            max_rel_error,
        });
    }
    Ok(GradReport {
        params,
        tolerance: opts.tolerance,
        kink_distance,
    })
}

/// Run [`finite_diff_check`] on `(store, model)` pairs drawn from `sample`
/// with successive seeds, skipping draws whose non-smooth arguments come within
/// `min_kink` of their kink. Gives up after `attempts` draws and returns the
/// last report.
pub fn finite_diff_check_resampled<M, S, F>(
    mut sample: S,
    loss_fn: F,
    opts: &GradCheckOptions,
    min_kink: f64,
    attempts: usize,
) -> Result<GradReport>
where
    S: FnMut(u64) -> Result<(ParamStore<f64>, M)>,
    F: Fn(&M, &mut Tape<f64>, &ParamStore<f64>) -> Result<Var>,
{
    let mut last = None;
    for attempt in 0..attempts.max(1) {
        let (mut store, model) = sample(opts.seed.wrapping_add(attempt as u64))?;
        let report = finite_diff_check(&mut store, |t, s| loss_fn(&model, t, s), opts)?;
        if report.kink_distance >= min_kink {
            return Ok(report);
        }
        last = Some(report);
    }
    Ok(last.expect("at least one attempt"))
}
