//! Finite differences, used as an independent check on the tape.

use rand::Rng;

use crate::error::Result;
use crate::numeric::{Init, Mlp, MlpSpec, ParamSet, Tape, Tensor};
use crate::rng::{normal_vec, rng_for};

pub const DEFAULT_STEP: f64 = 1e-5;
/// Gradients smaller than this are compared absolutely rather than relatively.
pub const REL_FLOOR: f64 = 1e-6;

/// `∂f/∂p` for every scalar of every parameter by Ridders' extrapolation of
/// central differences, starting from `step` and shrinking it geometrically.
pub fn numerical_gradients(
    params: &ParamSet,
    step: f64,
    mut f: impl FnMut(&ParamSet) -> Result<f64>,
) -> Result<Vec<Tensor>> {
    let mut work = params.clone();
    let mut out = Vec::with_capacity(params.len());
    for id in params.ids() {
        let mut g = Tensor::zeros(params.value(id).shape());
        for k in 0..g.len() {
            let orig = work.value(id).data()[k];
            let mut central = |h: f64| -> Result<f64> {
                work.value_mut(id).data_mut()[k] = orig + h;
                let plus = f(&work)?;
                work.value_mut(id).data_mut()[k] = orig - h;
                let minus = f(&work)?;
                work.value_mut(id).data_mut()[k] = orig;
                Ok((plus - minus) / (2.0 * h))
            };
            g.data_mut()[k] = ridders(step, &mut central)?;
        }
        out.push(g);
    }
    Ok(out)
}

/// Neville-table extrapolation of `d(h)` to `h → 0`.
fn ridders(step: f64, d: &mut impl FnMut(f64) -> Result<f64>) -> Result<f64> {
    const SHRINK: f64 = 1.4;
    const ROUNDS: usize = 10;
    let s2 = SHRINK * SHRINK;
    let mut h = step;
    let mut prev = vec![d(h)?];
    let (mut best, mut err) = (prev[0], f64::INFINITY);
    for _ in 1..ROUNDS {
        h /= SHRINK;
        let mut row = vec![d(h)?];
        let mut fac = s2;
        for j in 1..=prev.len() {
            let v = (row[j - 1] * fac - prev[j - 1]) / (fac - 1.0);
            fac *= s2;
            let e = (v - row[j - 1]).abs().max((v - prev[j - 1]).abs());
            if e <= err {
                err = e;
                best = v;
            }
            row.push(v);
        }
        let n = row.len();
        if (row[n - 1] - prev[n - 2]).abs() >= 2.0 * err {
            break;
        }
        prev = row;
    }
    Ok(best)
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

/// Worst per-coordinate discrepancy between analytic gradients in `params`
/// and the numerical estimates.
#[derive(Clone, Debug, PartialEq)]
pub struct GradCheck {
    pub max_rel_err: f64,
    pub worst_param: String,
    pub worst_index: usize,
    pub coordinates: usize,
}

pub fn compare(params: &ParamSet, numeric: &[Tensor]) -> GradCheck {
    let mut report = GradCheck {
        max_rel_err: 0.0,
        worst_param: String::new(),
        worst_index: 0,
        coordinates: 0,
    };
    for (id, num) in params.ids().zip(numeric) {
        let zero = Tensor::zeros(num.shape());
        let ana = params.grad(id).unwrap_or(&zero);
        for (k, (&a, &n)) in ana.data().iter().zip(num.data()).enumerate() {
            let e = relative_error(a, n);
            report.coordinates += 1;
            if e > report.max_rel_err || !e.is_finite() {
                report.max_rel_err = e;
                report.worst_param = params.name(id).to_string();
                report.worst_index = k;
            }
        }
    }
    report
}

/// Outcome of one randomized architecture in [`gradient_suite`].
#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct SuiteCase {
    pub spec: MlpSpec,
    pub batch: usize,
    pub loss: String,
    pub coordinates: usize,
    pub max_rel_err: f64,
    pub worst_param: String,
}

/// Random SiLU MLPs (with and without a head skip) under random losses,
/// checked coordinate by coordinate against central differences.
pub fn gradient_suite(cases: usize, seed: u64) -> Result<Vec<SuiteCase>> {
    let mut rng = rng_for(seed, "gradient-suite");
    let mut out = Vec::with_capacity(cases);
    for case in 0..cases {
        let input = rng.random_range(1..=4);
        let hidden: Vec<usize> = (0..rng.random_range(1..=3)).map(|_| rng.random_range(2..=6)).collect();
        let output = 2 * rng.random_range(1..=2);
        let mut spec = MlpSpec::new(input, hidden, output);
        if rng.random_bool(0.5) {
            spec.head_skip = input;
        }
        let batch = rng.random_range(2..=5);
        let loss_kind = case % 3;
        let mut params = ParamSet::new();
        let init = Init { gain: 1.5 };
        let mlp = Mlp::build(spec.clone(), "g", &mut params, init, &mut rng)?;
        let x = Tensor::matrix(batch, input, normal_vec(&mut rng, batch * input))?;
        let y = Tensor::matrix(batch, output, normal_vec(&mut rng, batch * output))?;
        let skip = spec.head_skip > 0;

        let eval = |p: &ParamSet, tape: &mut Tape| -> Result<crate::numeric::Var> {
            let xv = tape.constant(x.clone());
            let yv = tape.constant(y.clone());
            let o = mlp.forward(tape, p, xv, skip.then_some(xv))?;
            match loss_kind {
                0 => tape.mse(o, yv),
                1 => {
                    let m = tape.mse(o, yv)?;
                    let c = tape.cosine_loss(o, yv)?;
                    tape.add(m, c)
                }
                _ => {
                    let mu = tape.slice_cols(o, 0, output / 2)?;
                    let lv = tape.slice_cols(o, output / 2, output)?;
                    tape.kl_std_normal(mu, lv)
                }
            }
        };
        let mut tape = Tape::new();
        let loss = eval(&params, &mut tape)?;
        tape.backward(loss)?.write_to(&mut params);
        let numeric = numerical_gradients(&params, DEFAULT_STEP, |p| {
            let mut t = Tape::new();
            let l = eval(p, &mut t)?;
            Ok(t.scalar(l))
        })?;
        let check = compare(&params, &numeric);
        out.push(SuiteCase {
            spec,
            batch,
            loss: ["mse", "mse+cosine", "kl"][loss_kind].to_string(),
            coordinates: check.coordinates,
            max_rel_err: check.max_rel_err,
            worst_param: check.worst_param,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn suite_is_reproducible_and_tight() {
        let a = gradient_suite(4, 11).unwrap();
        assert_eq!(a, gradient_suite(4, 11).unwrap());
        for c in &a {
            assert!(c.max_rel_err <= 1e-4, "{c:?}");
        }
    }
}
