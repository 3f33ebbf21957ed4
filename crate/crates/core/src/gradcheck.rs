//! Central finite-difference verification of tape gradients.

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// One checked input tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckRow {
    pub name: String,
    /// `‖g_ad − g_fd‖∞ / max(1, ‖g_fd‖∞)`
    pub rel_err: f64,
    pub max_abs_fd: f64,
    pub checked: usize,
    pub passed: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub tol: f64,
    pub rows: Vec<GradCheckRow>,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.rows.iter().all(|r| r.passed)
    }

    pub fn max_rel_err(&self) -> f64 {
        self.rows.iter().map(|r| r.rel_err).fold(0.0, f64::max)
    }

    pub fn failures(&self) -> impl Iterator<Item = &GradCheckRow> {
        self.rows.iter().filter(|r| !r.passed)
    }
}

fn eval<F>(f: &F, inputs: &[Tensor]) -> Result<(Tape, Vec<Var>, Var)>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs
        .iter()
        .map(|t| tape.leaf(&t.clone().with_requires_grad(true)))
        .collect();
    let out = f(&mut tape, &vars)?;
    if tape.value(out).numel() != 1 {
        return Err(Error::Contract("grad_check function must return a scalar".into()));
    }
    Ok((tape, vars, out))
}

fn scalar<F>(f: &F, inputs: &[Tensor]) -> Result<f64>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let (tape, _, out) = eval(f, inputs)?;
    Ok(tape.value(out).data()[0])
}

/// Compares tape gradients of scalar `f` against central differences for
/// every element of every input.
pub fn grad_check<F>(f: F, inputs: &[(String, Tensor)], step: f64, tol: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    grad_check_elements(f, inputs, step, tol, |_, numel| (0..numel).collect())
}

/// Like [`grad_check`], but only perturbs the elements `select(input_index,
/// numel)` returns for each input.
pub fn grad_check_elements<F, S>(
    f: F,
    inputs: &[(String, Tensor)],
    step: f64,
    tol: f64,
    select: S,
) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
    S: Fn(usize, usize) -> Vec<usize>,
{
    if step <= 0.0 {
        return Err(Error::config("step", "must be positive"));
    }
    let mut values: Vec<Tensor> = inputs.iter().map(|(_, t)| t.clone()).collect();

    let (tape, vars, out) = eval(&f, &values)?;
    let base = tape.value(out).data()[0];
    if scalar(&f, &values)?.to_bits() != base.to_bits() {
        return Err(Error::Contract(
            "grad_check function is not deterministic: two forward passes differ".into(),
        ));
    }
    let grads = tape.backward(out)?;
    let analytic: Vec<Vec<f64>> = vars
        .iter()
        .zip(&values)
        .map(|(v, t)| grads.wrt(*v).map_or_else(|| vec![0.0; t.numel()], <[f64]>::to_vec))
        .collect();
    drop(tape);

    let mut rows = Vec::with_capacity(inputs.len());
    for (idx, (name, _)) in inputs.iter().enumerate() {
        let elems = select(idx, values[idx].numel());
        let mut max_diff: f64 = 0.0;
        let mut max_fd: f64 = 0.0;
        for &e in &elems {
            let orig = values[idx].data()[e];
            values[idx].data_mut()[e] = orig + step;
            let plus = scalar(&f, &values)?;
            values[idx].data_mut()[e] = orig - step;
            let minus = scalar(&f, &values)?;
            values[idx].data_mut()[e] = orig;
            let fd = (plus - minus) / (2.0 * step);
            max_diff = max_diff.max((analytic[idx][e] - fd).abs());
            max_fd = max_fd.max(fd.abs());
        }
        let rel_err = max_diff / max_fd.max(1.0);
        rows.push(GradCheckRow {
            name: name.clone(),
            rel_err,
            max_abs_fd: max_fd,
            checked: elems.len(),
            passed: rel_err < tol && rel_err.is_finite(),
        });
    }
    Ok(GradCheckReport { tol, rows })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_sum_is_exact() {
        // zeros keep both perturbed sums exactly ±step
        let x = Tensor::zeros(&[4]);
        let report = grad_check(|t, v| Ok(t.sum(v[0])), &[("x".into(), x)], 1e-5, 1e-12).unwrap();
        assert_eq!(report.rows[0].rel_err, 0.0);
        assert!(report.passed());
    }

    #[test]
    fn corrupted_backward_fails_and_names_the_input() {
        let x = Tensor::vector(&[0.3, -0.7, 1.1]);
        let report = grad_check(
            |t, v| {
                let y = t.map(v[0], f64::sin, |x| 1.1 * x.cos());
                Ok(t.sum(y))
            },
            &[("bad.weight".into(), x)],
            1e-5,
            1e-4,
        )
        .unwrap();
        assert!(!report.passed());
        assert_eq!(report.failures().next().unwrap().name, "bad.weight");
    }

    #[test]
    fn detects_nondeterminism() {
        use std::cell::Cell;
        let calls = Cell::new(0u32);
        let x = Tensor::vector(&[1.0]);
        let err = grad_check(
            |t, v| {
                calls.set(calls.get() + 1);
                let k = calls.get() as f64;
                Ok(t.scale(v[0], k))
            },
            &[("x".into(), x)],
            1e-5,
            1e-4,
        )
        .unwrap_err();
        assert!(matches!(err, Error::Contract(_)));
    }
}
