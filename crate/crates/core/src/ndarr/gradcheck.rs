use super::{DenseArray, NdError, Tape, Var};

/// Central-difference step.
const STEP: f64 = 1e-6;
/// Gradients smaller than this are compared on an absolute scale.
const REL_FLOOR: f64 = 1e-6;
/// Ulps of the loss allowed in each evaluation before differencing.
const ROUNDOFF_ULPS: f64 = 8.0;

#[derive(Debug, Clone, PartialEq)]
pub struct ParamCheck {
    pub index: usize,
    pub max_rel_err: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub params: Vec<ParamCheck>,
    pub tol: f64,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.params.iter().all(|p| p.passed)
    }

    pub fn max_rel_err(&self) -> f64 {
        self.params.iter().map(|p| p.max_rel_err).fold(0.0, f64::max)
    }
}

/// Compares tape gradients with central differences for every entry of every
/// parameter. The relative error of an entry is
/// `max(0, |analytic − numeric| − r) / max(|analytic|, |numeric|, 1e-6)`,
/// where `r = 8·ε·max(|loss|, 1)/h` is the roundoff a central difference
/// carries; without it an exact zero gradient reads as `±ε/h`.
pub fn grad_check<F>(params: &[DenseArray], builder: F, tol: f64) -> Result<GradCheckReport, NdError>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var, NdError>,
{
    let eval = |ps: &[DenseArray]| -> Result<f64, NdError> {
        let mut tape = Tape::new();
        let vars = ps
            .iter()
            .map(|p| tape.constant(p.clone()))
            .collect::<Result<Vec<_>, _>>()?;
        let loss = builder(&mut tape, &vars)?;
        let v = tape.value(loss);
        if v.len() != 1 {
            return Err(NdError::NonScalarLoss(v.shape().to_vec()));
        }
        Ok(v.data()[0])
    };

    let first = eval(params)?;
    let second = eval(params)?;
    if first.to_bits() != second.to_bits() {
        return Err(NdError::NonDeterministic { first, second });
    }

    let mut tape = Tape::new();
    let vars = params
        .iter()
        .map(|p| tape.param(p.clone()))
        .collect::<Result<Vec<_>, _>>()?;
    let loss = builder(&mut tape, &vars)?;
    let grads = tape.backward(loss)?;

    let roundoff = ROUNDOFF_ULPS * f64::EPSILON * first.abs().max(1.0) / STEP;
    let mut checks = Vec::with_capacity(params.len());
    let mut work = params.to_vec();
    for (pi, var) in vars.iter().enumerate() {
        let analytic = grads.wrt(&tape, *var);
        let mut worst = 0.0f64;
        for j in 0..params[pi].len() {
            let orig = params[pi].data()[j];
            work[pi].data_mut()[j] = orig + STEP;
            let up = eval(&work)?;
            work[pi].data_mut()[j] = orig - STEP;
            let down = eval(&work)?;
            work[pi].data_mut()[j] = orig;
            let numeric = (up - down) / (2.0 * STEP);
            let a = analytic.data()[j];
            let excess = ((a - numeric).abs() - roundoff).max(0.0);
            let err = excess / a.abs().max(numeric.abs()).max(REL_FLOOR);
            worst = worst.max(err);
        }
        checks.push(ParamCheck {
            index: pi,
            max_rel_err: worst,
            passed: worst <= tol,
        });
    }
    Ok(GradCheckReport { params: checks, tol })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ndarr::ReduceKind;
    use std::cell::Cell;

    #[test]
    fn quadratic_norm_matches() {
        let x = DenseArray::new(vec![4], vec![0.3, -1.1, 2.5, 0.7]).unwrap();
        let report = grad_check(
            &[x],
            |t, v| {
                let sq = t.hadamard(v[0], v[0])?;
                t.sum_all(sq)
            },
            1e-7,
        )
        .unwrap();
        assert!(report.passed(), "{report:?}");
    }

    #[test]
    fn kink_is_flagged() {
        // relu at exactly 0: one-sided analytic slope vs central difference 0.5
        let x = DenseArray::new(vec![2], vec![0.0, 1.0]).unwrap();
        let report = grad_check(
            &[x],
            |t, v| {
                let r = t.relu(v[0])?;
                t.sum_all(r)
            },
            1e-5,
        )
        .unwrap();
        assert!(!report.passed());
        assert!(report.max_rel_err() > 0.4);
    }

    #[test]
    fn empty_builder_passes() {
        let report = grad_check(&[], |t, _| t.constant(DenseArray::scalar(1.0)), 1e-5).unwrap();
        assert!(report.params.is_empty());
        assert!(report.passed());
    }

    #[test]
    fn nondeterministic_builder_is_detected() {
        let counter = Cell::new(0.0);
        let x = DenseArray::scalar(1.0);
        let err = grad_check(
            &[x],
            |t, v| {
                counter.set(counter.get() + 1.0);
                let c = t.constant(DenseArray::scalar(counter.get()))?;
                t.hadamard(v[0], c)
            },
            1e-5,
        )
        .unwrap_err();
        assert!(matches!(err, NdError::NonDeterministic { .. }));
    }

    #[test]
    fn composite_graph_matches() {
        let a = DenseArray::from_fn(&[3, 4], |i| ((i * 7 % 5) as f64 - 2.2) * 0.4);
        let b = DenseArray::from_fn(&[4, 2], |i| ((i * 3 % 7) as f64 - 3.1) * 0.3);
        let report = grad_check(
            &[a, b],
            |t, v| {
                let p = t.matmul(v[0], v[1])?;
                let r = t.leaky_relu(p, 0.2)?;
                let s = t.softmax_rows(r, None)?;
                let m = t.reduce_axis(s, 0, ReduceKind::Mean)?;
                let w = t.constant(DenseArray::new(vec![2], vec![1.0, -3.0])?)?;
                let h = t.hadamard(m, w)?;
                t.sum_all(h)
            },
            1e-5,
        )
        .unwrap();
        assert!(report.passed(), "{report:?}");
    }
}
