//! Finite-difference verification of tape gradients.

use super::tape::{Tape, TensorId};
use super::{NnError, Tensor};

/// Central-difference gradient of a scalar function, via the five-point
/// stencil `(f(x-2h) - 8f(x-h) + 8f(x+h) - f(x+2h)) / 12h`. The O(h^4)
/// truncation keeps roundoff and truncation both small at moderate `h`,
/// which matters once losses average over many near-zero-gradient pixels.
pub fn numeric_gradient<F>(mut f: F, x: &[f64], h: f64) -> Result<Vec<f64>, NnError>
where
    F: FnMut(&[f64]) -> Result<f64, NnError>,
{
    assert!(h > 0.0);
    let mut grad = vec![0.0; x.len()];
    let mut probe = x.to_vec();
    for i in 0..x.len() {
        let mut at = |offset: f64| -> Result<f64, NnError> {
            probe[i] = x[i] + offset;
            f(&probe)
        };
        let f_m2 = at(-2.0 * h)?;
        let f_m1 = at(-h)?;
        let f_p1 = at(h)?;
        let f_p2 = at(2.0 * h)?;
        probe[i] = x[i];
        // Difference near-equal values first so a coordinate with no
        // effect cancels to exactly zero instead of an ulp residue.
        grad[i] = (8.0 * (f_p1 - f_m1) + (f_m2 - f_p2)) / (12.0 * h);
    }
    Ok(grad)
}

/// Worst relative disagreement between two gradients, with the usual
/// `|a - n| / max(eps, |a| + |n|)` normalization.
pub fn max_rel_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    GradCheck::compare(analytic, numeric).max_rel_err
}

/// Denominator floor for the relative error: coordinates whose gradients
/// are tiny at the vector's overall scale are compared against that scale
/// instead. On such dead coordinates the finite difference returns pure
/// evaluation roundoff, which is noise of the loss function, not error in
/// the gradient being verified.
fn rel_floor(analytic: &[f64], numeric: &[f64]) -> f64 {
    let scale =
        analytic.iter().chain(numeric).fold(1.0f64, |m, &v| m.max(v.abs()));
    1e-3 * scale
}

/// Comparison of an analytic gradient against a finite-difference one.
#[derive(Debug, Clone)]
pub struct GradCheck {
    pub max_rel_err: f64,
    pub worst_index: Option<usize>,
}

impl GradCheck {
    pub fn compare(analytic: &[f64], numeric: &[f64]) -> Self {
        assert_eq!(analytic.len(), numeric.len());
        let floor = rel_floor(analytic, numeric);
        let mut worst = 0.0;
        let mut worst_index = None;
        for (i, (&a, &n)) in analytic.iter().zip(numeric).enumerate() {
            let e = (a - n).abs() / floor.max(a.abs() + n.abs());
            if e > worst {
                worst = e;
                worst_index = Some(i);
            }
        }
        GradCheck { max_rel_err: worst, worst_index }
    }

    pub fn passes(&self, tol: f64) -> bool {
        self.max_rel_err <= tol
    }
}

/// A self-contained gradient-check scenario: a differentiable scalar
/// function of a flat input vector, built on a fresh tape.
pub struct PrimitiveCase {
    pub name: &'static str,
    pub dim: usize,
    /// Nudges raw samples away from non-differentiable points (relu and
    /// clamp kinks, sqrt/log domain edges).
    pub sanitize: fn(&mut [f64]),
    /// Builds the graph; returns the input leaf and the scalar loss node.
    pub build: fn(&mut Tape, &[f64]) -> Result<(TensorId, TensorId), NnError>,
}

fn identity(_: &mut [f64]) {}

fn away_from_zero(x: &mut [f64]) {
    for v in x.iter_mut() {
        if v.abs() < 0.05 {
            *v += 0.1;
        }
    }
}

fn strictly_positive(x: &mut [f64]) {
    for v in x.iter_mut() {
        *v = v.abs().max(0.05) + 0.1;
    }
}

/// Deterministic projection constants giving each output element a
/// distinct weight, so a scalar loss exercises every gradient path.
fn proj(tape: &mut Tape, shape: &[usize]) -> Result<TensorId, NnError> {
    let n: usize = shape.iter().product();
    let data: Vec<f64> = (0..n).map(|i| ((i * 37 + 11) % 17) as f64 / 17.0 - 0.45).collect();
    tape.input(Tensor::new(shape.to_vec(), data)?)
}

fn weighted_sum(tape: &mut Tape, y: TensorId) -> Result<TensorId, NnError> {
    let p = proj(tape, &tape.shape(y).to_vec())?;
    let prod = tape.mul(y, p)?;
    tape.sum(prod)
}

pub fn primitive_cases() -> Vec<PrimitiveCase> {
    vec![
        PrimitiveCase {
            name: "add",
            dim: 8,
            sanitize: identity,
            build: |tape, x| {
                let a = tape.input(Tensor::new(vec![4], x[..4].to_vec())?)?;
                let b = tape.input(Tensor::new(vec![4], x[4..].to_vec())?)?;
                let ab = tape.concat(&[a, b], 0)?;
                let a2 = tape.slice(ab, 0, 0, 4)?;
                let b2 = tape.slice(ab, 0, 4, 4)?;
                let y = tape.add(a2, b2)?;
                Ok((ab, weighted_sum(tape, y)?))
            },
        },
        PrimitiveCase {
            name: "sub_mul",
            dim: 8,
            sanitize: identity,
            build: |tape, x| {
                let input = tape.input(Tensor::new(vec![8], x.to_vec())?)?;
                let a = tape.slice(input, 0, 0, 4)?;
                let b = tape.slice(input, 0, 4, 4)?;
                let d = tape.sub(a, b)?;
                let y = tape.mul(d, b)?;
                Ok((input, weighted_sum(tape, y)?))
            },
        },
        PrimitiveCase {
            name: "scale_add_scalar",
            dim: 6,
            sanitize: identity,
            build: |tape, x| {
                let input = tape.input(Tensor::new(vec![6], x.to_vec())?)?;
                let s = tape.scale(input, -2.5)?;
                let y = tape.add_scalar(s, 0.75)?;
                Ok((input, weighted_sum(tape, y)?))
            },
        },
        PrimitiveCase {
            name: "matmul",
            dim: 12,
            sanitize: identity,
            build: |tape, x| {
                let input = tape.input(Tensor::new(vec![12], x.to_vec())?)?;
                let af = tape.slice(input, 0, 0, 6)?;
                let bf = tape.slice(input, 0, 6, 6)?;
                let a = tape.reshape(af, vec![2, 3])?;
                let b = tape.reshape(bf, vec![3, 2])?;
                let y = tape.matmul(a, b)?;
                Ok((input, weighted_sum(tape, y)?))
            },
        },
        PrimitiveCase {
            name: "conv2d_s1p0",
            dim: 16 + 8 + 2,
            sanitize: identity,
            build: |tape, x| {
                let input = tape.input(Tensor::new(vec![26], x.to_vec())?)?;
                let imf = tape.slice(input, 0, 0, 16)?;
                let wf = tape.slice(input, 0, 16, 8)?;
                let bf = tape.slice(input, 0, 24, 2)?;
                let im = tape.reshape(imf, vec![1, 4, 4])?;
                let w = tape.reshape(wf, vec![2, 1, 2, 2])?;
                let y = tape.conv2d(im, w, bf, 1, 0)?;
                Ok((input, weighted_sum(tape, y)?))
            },
        },
        PrimitiveCase {
            name: "conv2d_s2p1",
            dim: 16 + 9 + 1,
            sanitize: identity,
            build: |tape, x| {
                let input = tape.input(Tensor::new(vec![26], x.to_vec())?)?;
                let imf = tape.slice(input, 0, 0, 16)?;
                let wf = tape.slice(input, 0, 16, 9)?;
                let bf = tape.slice(input, 0, 25, 1)?;
                let im = tape.reshape(imf, vec![1, 4, 4])?;
                let w = tape.reshape(wf, vec![1, 1, 3, 3])?;
                let y = tape.conv2d(im, w, bf, 2, 1)?;
                Ok((input, weighted_sum(tape, y)?))
            },
        },
        PrimitiveCase {
            name: "upsample2x",
            dim: 8,
            sanitize: identity,
            build: |tape, x| {
                let input = tape.input(Tensor::new(vec![8], x.to_vec())?)?;
                let im = tape.reshape(input, vec![2, 2, 2])?;
                let y = tape.upsample2x(im)?;
                Ok((input, weighted_sum(tape, y)?))
            },
        },
        PrimitiveCase {
            name: "relu",
            dim: 8,
            sanitize: away_from_zero,
            build: |tape, x| {
                let input = tape.input(Tensor::new(vec![8], x.to_vec())?)?;
                let y = tape.relu(input)?;
                Ok((input, weighted_sum(tape, y)?))
            },
        },
        PrimitiveCase {
            name: "tanh",
            dim: 8,
            sanitize: identity,
            build: |tape, x| {
                let input = tape.input(Tensor::new(vec![8], x.to_vec())?)?;
                let y = tape.tanh(input)?;
                Ok((input, weighted_sum(tape, y)?))
            },
        },
        PrimitiveCase {
            name: "sigmoid",
            dim: 8,
            sanitize: identity,
            build: |tape, x| {
                let input = tape.input(Tensor::new(vec![8], x.to_vec())?)?;
                let y = tape.sigmoid(input)?;
                Ok((input, weighted_sum(tape, y)?))
            },
        },
        PrimitiveCase {
            name: "softmax",
            dim: 8,
            sanitize: identity,
            build: |tape, x| {
                let input = tape.input(Tensor::new(vec![8], x.to_vec())?)?;
                let y = tape.softmax(input)?;
                Ok((input, weighted_sum(tape, y)?))
            },
        },
        PrimitiveCase {
            name: "concat_slice",
            dim: 9,
            sanitize: identity,
            build: |tape, x| {
                let input = tape.input(Tensor::new(vec![9], x.to_vec())?)?;
                let a = tape.slice(input, 0, 0, 3)?;
                let b = tape.slice(input, 0, 3, 6)?;
                let am = tape.reshape(a, vec![3, 1])?;
                let bm = tape.reshape(b, vec![3, 2])?;
                let y = tape.concat(&[am, bm], 1)?;
                Ok((input, weighted_sum(tape, y)?))
            },
        },
        PrimitiveCase {
            name: "mean",
            dim: 6,
            sanitize: identity,
            build: |tape, x| {
                let input = tape.input(Tensor::new(vec![6], x.to_vec())?)?;
                let m = tape.mean(input)?;
                // Square it so the gradient is input-dependent.
                let y = tape.mul(m, m)?;
                Ok((input, y))
            },
        },
        PrimitiveCase {
            name: "sqrt",
            dim: 6,
            sanitize: strictly_positive,
            build: |tape, x| {
                let input = tape.input(Tensor::new(vec![6], x.to_vec())?)?;
                let y = tape.sqrt(input)?;
                Ok((input, weighted_sum(tape, y)?))
            },
        },
        PrimitiveCase {
            name: "log",
            dim: 6,
            sanitize: strictly_positive,
            build: |tape, x| {
                let input = tape.input(Tensor::new(vec![6], x.to_vec())?)?;
                let y = tape.log(input)?;
                Ok((input, weighted_sum(tape, y)?))
            },
        },
        PrimitiveCase {
            name: "clamp",
            dim: 8,
            sanitize: |x| {
                // Keep samples away from the clamp edges at +-0.6.
                for v in x.iter_mut() {
                    if (v.abs() - 0.6).abs() < 0.05 {
                        *v *= 0.8;
                    }
                }
            },
            build: |tape, x| {
                let input = tape.input(Tensor::new(vec![8], x.to_vec())?)?;
                let y = tape.clamp(input, -0.6, 0.6)?;
                Ok((input, weighted_sum(tape, y)?))
            },
        },
        PrimitiveCase {
            name: "l2norm",
            dim: 6,
            sanitize: away_from_zero,
            build: |tape, x| {
                let input = tape.input(Tensor::new(vec![6], x.to_vec())?)?;
                let y = tape.l2norm(input)?;
                Ok((input, y))
            },
        },
        PrimitiveCase {
            name: "linear",
            dim: 6 + 2 + 3,
            sanitize: identity,
            build: |tape, x| {
                let input = tape.input(Tensor::new(vec![11], x.to_vec())?)?;
                let wf = tape.slice(input, 0, 0, 6)?;
                let xf = tape.slice(input, 0, 6, 2)?;
                let bf = tape.slice(input, 0, 8, 3)?;
                let w = tape.reshape(wf, vec![3, 2])?;
                let y = tape.linear(w, xf, bf)?;
                Ok((input, weighted_sum(tape, y)?))
            },
        },
    ]
}

/// Run one case at one point: analytic tape gradient vs central
/// differences with `h = 1e-5`.
pub fn run_case(case: &PrimitiveCase, x: &[f64]) -> Result<GradCheck, NnError> {
    assert_eq!(x.len(), case.dim);
    let mut tape = Tape::new();
    let (input, loss) = (case.build)(&mut tape, x)?;
    tape.backward(loss)?;
    let analytic = tape
        .grad(input)
        .map(|g| g.to_vec())
        .unwrap_or_else(|| vec![0.0; x.len()]);
    let numeric = numeric_gradient(
        |xp| {
            let mut t = Tape::new();
            let (_, l) = (case.build)(&mut t, xp)?;
            Ok(t.value(l).item())
        },
        x,
        1e-5,
    )?;
    Ok(GradCheck::compare(&analytic, &numeric))
}

/// Deterministic sweep over every primitive case, several random points
/// each; returns `(name, worst relative error)` rows for reporting.
pub fn primitive_suite(seed: u64, trials: usize) -> Result<Vec<(&'static str, f64)>, NnError> {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut rows = Vec::new();
    for case in primitive_cases() {
        let mut worst = 0.0f64;
        for _ in 0..trials {
            let mut x: Vec<f64> =
                (0..case.dim).map(|_| rng.random_range(-1.0..1.0)).collect();
            (case.sanitize)(&mut x);
            let check = run_case(&case, &x)?;
            worst = worst.max(check.max_rel_err);
        }
        rows.push((case.name, worst));
    }
    Ok(rows)
}
