//! Finite-difference verification of recorded gradients.
//!
//! The numeric side re-evaluates the loss with each parameter entry nudged
//! by ±step (central differences) and never touches the tape's backward
//! rules, so it stays an independent oracle for them.

use crate::diffcore::tape::{Tape, ValueId};
use crate::diffcore::tensor::Tensor;
use crate::error::Result;
use crate::scalar::Scalar;

/// Relative errors below this denominator floor are measured against the
/// floor itself, so a parameter whose true gradient is zero does not fail
/// on finite-difference noise.
const REL_DENOM_FLOOR: f64 = 1e-6;

/// Outcome for one named parameter tensor.
#[derive(Clone, Debug)]
pub struct GradCheckEntry {
    pub name: String,
    pub max_rel_err: f64,
    pub pass: bool,
}

/// Per-parameter comparison of analytic and central-difference gradients.
#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub entries: Vec<GradCheckEntry>,
    pub tolerance: f64,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.entries.iter().all(|e| e.pass)
    }

    /// One line per parameter plus a verdict, for CLI output.
    pub fn render(&self) -> String {
        let mut out = String::new();
        for e in &self.entries {
            out.push_str(&format!(
                "{:<24} max_rel_err {:>12.3e}  {}\n",
                e.name,
                e.max_rel_err,
                if e.pass { "PASS" } else { "FAIL" }
            ));
        }
        out.push_str(&format!(
            "gradcheck: {} (tolerance {:.1e})\n",
            if self.passed() { "PASS" } else { "FAIL" },
            self.tolerance
        ));
        out
    }
}

/// Evaluate the loss once and return analytic gradients via the tape,
/// one tensor per parameter, in parameter order.
pub fn analytic_gradients<T, F>(
    params: &[(String, Tensor<T>)],
    loss_fn: &F,
) -> Result<(T, Vec<Tensor<T>>)>
where
    T: Scalar,
    F: Fn(&mut Tape<T>, &[ValueId]) -> Result<ValueId>,
{
    let mut tape = Tape::new();
    let ids: Vec<ValueId> = params.iter().map(|(_, t)| tape.leaf(t.clone())).collect();
    let loss = loss_fn(&mut tape, &ids)?;
    let loss_value = tape.value(loss).item();
    let grads = tape.backward(loss)?;
    let out = ids
        .iter()
        .zip(params.iter())
        .map(|(&id, (_, t))| grads.wrt_or_zeros(id, t))
        .collect();
    Ok((loss_value, out))
}

fn eval_loss<T, F>(params: &[(String, Tensor<T>)], loss_fn: &F) -> Result<T>
where
    T: Scalar,
    F: Fn(&mut Tape<T>, &[ValueId]) -> Result<ValueId>,
{
    let mut tape = Tape::new();
    let ids: Vec<ValueId> = params.iter().map(|(_, t)| tape.leaf(t.clone())).collect();
    let loss = loss_fn(&mut tape, &ids)?;
    Ok(tape.value(loss).item())
}

/// Central finite differences of the loss for every parameter entry.
pub fn numeric_gradients<T, F>(
    params: &[(String, Tensor<T>)],
    loss_fn: &F,
    step: T,
) -> Result<Vec<Tensor<T>>>
where
    T: Scalar,
    F: Fn(&mut Tape<T>, &[ValueId]) -> Result<ValueId>,
{
    let mut scratch: Vec<(String, Tensor<T>)> = params.to_vec();
    let two_step = step + step;
    let mut out = Vec::with_capacity(params.len());
    for p in 0..params.len() {
        let mut grad = params[p].1.zeros_like();
        for idx in 0..params[p].1.len() {
            let original = params[p].1.data()[idx];
            scratch[p].1.data_mut()[idx] = original + step;
            let plus = eval_loss(&scratch, loss_fn)?;
            scratch[p].1.data_mut()[idx] = original - step;
            let minus = eval_loss(&scratch, loss_fn)?;
            scratch[p].1.data_mut()[idx] = original;
            grad.data_mut()[idx] = (plus - minus) / two_step;
        }
        out.push(grad);
    }
    Ok(out)
}

/// Element-wise maximum relative error per parameter, against `tolerance`.
///
/// Exposed separately so a corrupted analytic gradient can be fed in as a
/// negative control.
pub fn compare_gradients<T: Scalar>(
    names: &[String],
    analytic: &[Tensor<T>],
    numeric: &[Tensor<T>],
    tolerance: f64,
) -> GradCheckReport {
    assert_eq!(names.len(), analytic.len());
    assert_eq!(names.len(), numeric.len());
    let entries = names
        .iter()
        .zip(analytic.iter().zip(numeric.iter()))
        .map(|(name, (a, n))| {
            let mut max_rel = 0.0_f64;
            for (&av, &nv) in a.data().iter().zip(n.data().iter()) {
                let av = av.to_f64_lossy();
                let nv = nv.to_f64_lossy();
                let denom = (av.abs() + nv.abs()).max(REL_DENOM_FLOOR);
                max_rel = max_rel.max((av - nv).abs() / denom);
            }
            GradCheckEntry {
                name: name.clone(),
                max_rel_err: max_rel,
                pass: max_rel < tolerance,
            }
        })
        .collect();
    GradCheckReport { entries, tolerance }
}

/// Full check: analytic vs central finite differences for every parameter.
pub fn grad_check<T, F>(
    params: &[(String, Tensor<T>)],
    loss_fn: &F,
    step: T,
    tolerance: f64,
) -> Result<GradCheckReport>
where
    T: Scalar,
    F: Fn(&mut Tape<T>, &[ValueId]) -> Result<ValueId>,
{
    let (_, analytic) = analytic_gradients(params, loss_fn)?;
    let numeric = numeric_gradients(params, loss_fn, step)?;
    let names: Vec<String> = params.iter().map(|(n, _)| n.clone()).collect();
    Ok(compare_gradients(&names, &analytic, &numeric, tolerance))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params(entries: &[(&str, Vec<Vec<f64>>)]) -> Vec<(String, Tensor<f64>)> {
        entries
            .iter()
            .map(|(n, rows)| (n.to_string(), Tensor::from_rows(rows).unwrap()))
            .collect()
    }

    #[test]
    fn linear_loss_matches_to_machine_precision() {
        // loss = sum(3·w): analytic and central differences are both exact.
        let p = params(&[("w", vec![vec![0.3, -1.1], vec![2.0, 0.0]])]);
        let report = grad_check(
            &p,
            &|tape, ids| {
                let scaled = tape.scale(ids[0], 3.0);
                Ok(tape.sum(scaled))
            },
            1e-5,
            1e-9,
        )
        .unwrap();
        assert!(report.passed(), "{}", report.render());
    }

    #[test]
    fn softmax_composite_passes_at_1e4() {
        let p = params(&[
            ("w", vec![vec![0.5, -0.2, 0.9], vec![1.5, 0.0, -0.4]]),
            ("v", vec![vec![0.3, 0.8, -0.6], vec![-0.1, 0.2, 0.7]]),
        ]);
        let report = grad_check(
            &p,
            &|tape, ids| {
                let vt = tape.transpose(ids[1]);
                let prod = tape.matmul(ids[0], vt)?;
                let act = tape.leaky_relu(prod, 0.2);
                let soft = tape.softmax_rows(act);
                let logged = tape.log_clamped(soft, 1e-8);
                let weighted = tape.mul(soft, logged)?;
                Ok(tape.sum(weighted))
            },
            1e-5,
            1e-4,
        )
        .unwrap();
        assert!(report.passed(), "{}", report.render());
    }

    #[test]
    fn corrupted_analytic_gradient_is_flagged() {
        let p = params(&[("w", vec![vec![0.4, 1.2]])]);
        let loss_fn = |tape: &mut Tape<f64>, ids: &[ValueId]| {
            let sq = tape.mul(ids[0], ids[0])?;
            Ok(tape.sum(sq))
        };
        let (_, mut analytic) = analytic_gradients(&p, &loss_fn).unwrap();
        let numeric = numeric_gradients(&p, &loss_fn, 1e-5).unwrap();
        // Corrupt one entry the way a wrong backward rule would.
        analytic[0].data_mut()[1] += 0.5;
        let names = vec!["w".to_string()];
        let report = compare_gradients(&names, &analytic, &numeric, 1e-4);
        assert!(!report.passed());
        assert!(report.entries[0].max_rel_err > 1e-2);
    }

    #[test]
    fn zero_gradient_parameter_passes() {
        // loss ignores the second parameter entirely.
        let p = params(&[("used", vec![vec![1.0]]), ("unused", vec![vec![5.0]])]);
        let report = grad_check(
            &p,
            &|tape, ids| {
                let sq = tape.mul(ids[0], ids[0])?;
                Ok(tape.sum(sq))
            },
            1e-5,
            1e-4,
        )
        .unwrap();
        assert!(report.passed(), "{}", report.render());
    }
}
