//! Finite-difference verification of the tape's backward rules.
//!
//! Loss graphs are expressed as closures that rebuild the tape from a
//! parameter list, so a check can re-evaluate the loss at perturbed
//! parameter values. Checks should run with `R = f64`; f32 central
//! differences drown in roundoff.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

use super::tape::{window_source, ConvSpec, PadMode, Tape, VarId};
use super::{Real, Tensor};

/// Builds `loss(params)` once and returns the loss value plus the gradient
/// for every parameter, in parameter order. Parameters the loss never
/// touches get zero gradients.
pub fn value_and_grad<R: Real, F>(params: &[Tensor<R>], build: &F) -> Result<(R, Vec<Tensor<R>>)>
where
    F: Fn(&mut Tape<R>, &[VarId]) -> Result<VarId>,
{
    let mut tape = Tape::new();
    let ids: Vec<VarId> = params.iter().map(|p| tape.leaf(p.clone(), true)).collect();
    let loss = build(&mut tape, &ids)?;
    let value = tape.value(loss).data[0];
    if !value.is_finite() {
        return Err(Error::Numeric("loss is not finite".to_string()));
    }
    let mut grads = tape.backward(loss)?;
    let out = ids
        .iter()
        .zip(params)
        .map(|(id, p)| {
            grads[id.index()]
                .take()
                .unwrap_or_else(|| Tensor::zeros(p.dims.clone()))
        })
        .collect();
    Ok((value, out))
}

fn eval_loss<R: Real, F>(params: &[Tensor<R>], build: &F) -> Result<R>
where
    F: Fn(&mut Tape<R>, &[VarId]) -> Result<VarId>,
{
    let mut tape = Tape::new();
    let ids: Vec<VarId> = params.iter().map(|p| tape.leaf(p.clone(), false)).collect();
    let loss = build(&mut tape, &ids)?;
    let value = tape.value(loss).data[0];
    if !value.is_finite() {
        return Err(Error::Numeric("loss is not finite".to_string()));
    }
    Ok(value)
}

fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-12)
}

/// Central-difference check of the analytic gradients, per coordinate.
/// Returns the worst relative error over all parameter entries.
pub fn finite_diff_check<R: Real, F>(params: &[Tensor<R>], eps: f64, build: &F) -> Result<f64>
where
    F: Fn(&mut Tape<R>, &[VarId]) -> Result<VarId>,
{
    let (_, grads) = value_and_grad(params, build)?;
    finite_diff_compare(params, &grads, eps, build)
}

/// Central differences against an externally supplied gradient set; the
/// corruption-detection path of the checker. `grads` must mirror `params`
/// in shape.
pub fn finite_diff_compare<R: Real, F>(
    params: &[Tensor<R>],
    grads: &[Tensor<R>],
    eps: f64,
    build: &F,
) -> Result<f64>
where
    F: Fn(&mut Tape<R>, &[VarId]) -> Result<VarId>,
{
    if !(eps > 0.0) {
        return Err(Error::validation("finite difference step must be positive"));
    }
    if grads.len() != params.len() {
        return Err(Error::shape("gradient set", params.len(), grads.len()));
    }
    let step = R::from_f64(eps);
    let mut worst = 0.0f64;
    let mut work: Vec<Tensor<R>> = params.to_vec();
    for (pi, grad) in grads.iter().enumerate() {
        if grad.dims != params[pi].dims {
            return Err(Error::shape(
                "gradient dims",
                format!("{:?}", params[pi].dims),
                format!("{:?}", grad.dims),
            ));
        }
        for ci in 0..params[pi].len() {
            let orig = work[pi].data[ci];
            work[pi].data[ci] = orig + step;
            let up = eval_loss(&work, build)?;
            work[pi].data[ci] = orig - step;
            let down = eval_loss(&work, build)?;
            work[pi].data[ci] = orig;
            let numeric = (up - down).as_f64() / (2.0 * eps);
            worst = worst.max(relative_error(numeric, grad.data[ci].as_f64()));
        }
    }
    Ok(worst)
}

/// Directional-derivative variant for parameter sets too large for a
/// per-coordinate sweep: compares `probes` random unit directions.
pub fn finite_diff_check_probes<R: Real, F>(
    params: &[Tensor<R>],
    eps: f64,
    probes: usize,
    seed: u64,
    build: &F,
) -> Result<f64>
where
    F: Fn(&mut Tape<R>, &[VarId]) -> Result<VarId>,
{
    if !(eps > 0.0) {
        return Err(Error::validation("finite difference step must be positive"));
    }
    let (_, grads) = value_and_grad(params, build)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for _ in 0..probes {
        let dirs: Vec<Vec<f64>> = params
            .iter()
            .map(|p| (0..p.len()).map(|_| rng.random::<f64>() - 0.5).collect())
            .collect();
        let norm: f64 = dirs
            .iter()
            .flat_map(|d| d.iter().map(|v| v * v))
            .sum::<f64>()
            .sqrt()
            .max(1e-12);
        let shifted = |sign: f64| -> Vec<Tensor<R>> {
            params
                .iter()
                .zip(&dirs)
                .map(|(p, d)| {
                    let data = p
                        .data
                        .iter()
                        .zip(d)
                        .map(|(&v, &dv)| v + R::from_f64(sign * eps * dv / norm))
                        .collect();
                    Tensor {
                        dims: p.dims.clone(),
                        data,
                    }
                })
                .collect()
        };
        let up = eval_loss(&shifted(1.0), build)?;
        let down = eval_loss(&shifted(-1.0), build)?;
        let numeric = (up - down).as_f64() / (2.0 * eps);
        let analytic: f64 = grads
            .iter()
            .zip(&dirs)
            .flat_map(|(g, d)| g.data.iter().zip(d).map(|(&gv, &dv)| gv.as_f64() * dv / norm))
            .sum();
        worst = worst.max(relative_error(numeric, analytic));
    }
    Ok(worst)
}

/// One line of a gradient-check run.
#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub name: String,
    pub max_rel_err: f64,
    pub tolerance: f64,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.max_rel_err <= self.tolerance
    }
}

const PRIMITIVE_TOL: f64 = 1e-6;
/// Composed graphs accumulate truncation error across ops, so the chain
/// check gets the same bound as the full training objective.
const COMPOSITE_TOL: f64 = 1e-5;
const SUITE_EPS: f64 = 1e-5;

fn rand_data(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.random::<f64>() - 0.5).collect()
}

fn rand_tensor(rng: &mut ChaCha8Rng, dims: Vec<usize>) -> Tensor<f64> {
    let n = dims.iter().product();
    Tensor::new(dims, rand_data(rng, n)).unwrap()
}

/// Random values bounded away from zero, for kinked ops.
fn rand_tensor_offset(rng: &mut ChaCha8Rng, dims: Vec<usize>, min_abs: f64) -> Tensor<f64> {
    let n = dims.iter().product();
    let data = (0..n)
        .map(|_| {
            let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
            sign * (min_abs + (1.0 - min_abs) * rng.random::<f64>())
        })
        .collect();
    Tensor::new(dims, data).unwrap()
}

fn check_with<F>(name: &str, tolerance: f64, params: Vec<Tensor<f64>>, build: F) -> GradCheckReport
where
    F: Fn(&mut Tape<f64>, &[VarId]) -> crate::error::Result<VarId>,
{
    let max_rel_err = match finite_diff_check(&params, SUITE_EPS, &build) {
        Ok(e) => e,
        Err(_) => f64::INFINITY,
    };
    GradCheckReport {
        name: name.to_string(),
        max_rel_err,
        tolerance,
    }
}

fn check_one<F>(name: &str, params: Vec<Tensor<f64>>, build: F) -> GradCheckReport
where
    F: Fn(&mut Tape<f64>, &[VarId]) -> crate::error::Result<VarId>,
{
    check_with(name, PRIMITIVE_TOL, params, build)
}

/// Runs a gradient check for every supported tape operation plus one
/// composed attention chain, one report each. All graphs are f64 and
/// seeded, so the suite is deterministic.
pub fn gradcheck_suite(seed: u64) -> Vec<GradCheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut reports = Vec::new();

    {
        let probe = rand_tensor(&mut rng, vec![3, 4]);
        let params = vec![rand_tensor(&mut rng, vec![3, 4]), rand_tensor(&mut rng, vec![3, 4])];
        reports.push(check_one("add", params, move |tape, ids| {
            let p = tape.constant(probe.clone());
            let s = tape.add(ids[0], ids[1])?;
            let m = tape.mul(s, p)?;
            tape.sum(m)
        }));
    }
    {
        let probe = rand_tensor(&mut rng, vec![3, 4]);
        let params = vec![rand_tensor(&mut rng, vec![3, 4]), rand_tensor(&mut rng, vec![3, 4])];
        reports.push(check_one("sub", params, move |tape, ids| {
            let p = tape.constant(probe.clone());
            let s = tape.sub(ids[0], ids[1])?;
            let m = tape.mul(s, p)?;
            tape.sum(m)
        }));
    }
    {
        let probe = rand_tensor(&mut rng, vec![3, 4]);
        let params = vec![rand_tensor(&mut rng, vec![3, 4]), rand_tensor(&mut rng, vec![3, 4])];
        reports.push(check_one("mul", params, move |tape, ids| {
            let p = tape.constant(probe.clone());
            let s = tape.mul(ids[0], ids[1])?;
            let m = tape.mul(s, p)?;
            tape.sum(m)
        }));
    }
    {
        let params = vec![rand_tensor(&mut rng, vec![2, 5])];
        reports.push(check_one("scale", params, |tape, ids| {
            let s = tape.scale(ids[0], -0.37)?;
            tape.sum(s)
        }));
    }
    {
        let params = vec![rand_tensor(&mut rng, vec![4, 4])];
        reports.push(check_one("sum", params, |tape, ids| {
            let s = tape.sum(ids[0])?;
            tape.scale(s, 1.7)
        }));
    }
    {
        let probe = rand_tensor(&mut rng, vec![4, 5]);
        let params = vec![rand_tensor_offset(&mut rng, vec![4, 5], 0.1)];
        reports.push(check_one("relu", params, move |tape, ids| {
            let r = tape.relu(ids[0])?;
            let p = tape.constant(probe.clone());
            let m = tape.mul(r, p)?;
            tape.sum(m)
        }));
    }
    for (name, stride, pad) in [
        ("conv2d_zero_s1", 1usize, PadMode::Zero),
        ("conv2d_zero_s2", 2, PadMode::Zero),
        ("conv2d_reflect_s1", 1, PadMode::Reflect),
    ] {
        let out_dims = {
            let oh = 6usize.div_ceil(stride);
            vec![oh, oh, 3]
        };
        let probe = rand_tensor(&mut rng, out_dims);
        let params = vec![
            rand_tensor(&mut rng, vec![6, 6, 2]),
            rand_tensor(&mut rng, vec![3, 3, 3, 2]),
            rand_tensor(&mut rng, vec![3]),
        ];
        reports.push(check_one(name, params, move |tape, ids| {
            let y = tape.conv2d(ids[0], ids[1], Some(ids[2]), ConvSpec { stride, pad })?;
            let p = tape.constant(probe.clone());
            let m = tape.mul(y, p)?;
            tape.sum(m)
        }));
    }
    for (name, src, dst) in [("resize_up", 5usize, 9usize), ("resize_down", 9, 5)] {
        let probe = rand_tensor(&mut rng, vec![dst, dst, 2]);
        let params = vec![rand_tensor(&mut rng, vec![src, src, 2])];
        reports.push(check_one(name, params, move |tape, ids| {
            let y = tape.resize_bilinear(ids[0], dst, dst)?;
            let p = tape.constant(probe.clone());
            let m = tape.mul(y, p)?;
            tape.sum(m)
        }));
    }
    {
        // probe zeroed on out-of-grid window entries so the masked logit
        // sentinel never reaches the loss
        let (h, w, window) = (5usize, 5usize, 3usize);
        let mut probe = rand_tensor(&mut rng, vec![h * w, window * window]);
        for q in 0..h * w {
            for j in 0..window * window {
                if window_source(q, j, h, w, window).is_none() {
                    probe.data[q * window * window + j] = 0.0;
                }
            }
        }
        let params = vec![
            rand_tensor(&mut rng, vec![h, w, 3]),
            rand_tensor(&mut rng, vec![h, w, 3]),
        ];
        reports.push(check_one("local_logits", params, move |tape, ids| {
            let y = tape.local_logits(ids[0], ids[1], window)?;
            let p = tape.constant(probe.clone());
            let m = tape.mul(y, p)?;
            tape.sum(m)
        }));
    }
    {
        let probe = rand_tensor(&mut rng, vec![6, 9]);
        let params = vec![rand_tensor(&mut rng, vec![6, 9])];
        reports.push(check_one("softmax_rows", params, move |tape, ids| {
            let y = tape.softmax_rows(ids[0])?;
            let p = tape.constant(probe.clone());
            let m = tape.mul(y, p)?;
            tape.sum(m)
        }));
    }
    {
        let (h, w, window) = (5usize, 5usize, 3usize);
        let probe = rand_tensor(&mut rng, vec![h, w, 2]);
        let params = vec![
            rand_tensor(&mut rng, vec![h * w, window * window]),
            rand_tensor(&mut rng, vec![h, w, 2]),
        ];
        reports.push(check_one("soft_copy", params, move |tape, ids| {
            let y = tape.soft_copy(ids[0], ids[1], window)?;
            let p = tape.constant(probe.clone());
            let m = tape.mul(y, p)?;
            tape.sum(m)
        }));
    }
    {
        let params = vec![rand_tensor_offset(&mut rng, vec![4, 5], 0.1)];
        let target = Tensor::zeros(vec![4, 5]);
        reports.push(check_one("l1_smooth_linear", params, move |tape, ids| {
            let t = tape.constant(target.clone());
            tape.l1_smooth(ids[0], t, 1e-3)
        }));
    }
    {
        let mut rng2 = ChaCha8Rng::seed_from_u64(0x5eed + 1);
        let data = (0..20).map(|_| 0.3 * (rng2.random::<f64>() - 0.5)).collect();
        let params = vec![Tensor::new(vec![4, 5], data).unwrap()];
        let target = Tensor::zeros(vec![4, 5]);
        reports.push(check_one("l1_smooth_quadratic", params, move |tape, ids| {
            let t = tape.constant(target.clone());
            tape.l1_smooth(ids[0], t, 0.5)
        }));
    }
    {
        // the production attention shape: logits -> softmax -> soft copy -> loss
        let (h, w, window) = (6usize, 6usize, 3usize);
        let target = rand_tensor(&mut rng, vec![h, w, 1]);
        let params = vec![
            rand_tensor(&mut rng, vec![h, w, 4]),
            rand_tensor(&mut rng, vec![h, w, 4]),
            rand_tensor(&mut rng, vec![h, w, 1]),
        ];
        reports.push(check_with(
            "attention_chain",
            COMPOSITE_TOL,
            params,
            move |tape, ids| {
                let logits = tape.local_logits(ids[0], ids[1], window)?;
                let factors = tape.softmax_rows(logits)?;
                let recon = tape.soft_copy(factors, ids[2], window)?;
                let t = tape.constant(target.clone());
                tape.l1_smooth(recon, t, 1e-3)
            },
        ));
    }
    reports
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quadratic_params() -> Vec<Tensor<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        vec![rand_tensor_offset(&mut rng, vec![3, 3], 0.2)]
    }

    fn quadratic_build(tape: &mut Tape<f64>, ids: &[VarId]) -> crate::error::Result<VarId> {
        let sq = tape.mul(ids[0], ids[0])?;
        tape.sum(sq)
    }

    #[test]
    fn quadratic_loss_checks_tightly() {
        let params = quadratic_params();
        let err = finite_diff_check(&params, 1e-4, &quadratic_build).unwrap();
        assert!(err <= 1e-7, "max rel err {err}");
    }

    #[test]
    fn empty_parameter_set_has_zero_error() {
        let err = finite_diff_check(&[], 1e-4, &|tape: &mut Tape<f64>, _ids: &[VarId]| {
            let c = tape.constant(Tensor::scalar(2.5));
            tape.sum(c)
        })
        .unwrap();
        assert_eq!(err, 0.0);
    }

    #[test]
    fn corrupted_gradient_is_flagged() {
        let params = quadratic_params();
        let (_, mut grads) = value_and_grad(&params, &quadratic_build).unwrap();
        grads[0].data[0] *= 1.1;
        let err = finite_diff_compare(&params, &grads, 1e-4, &quadratic_build).unwrap();
        assert!(err > 1e-2, "corruption slipped through: {err}");
    }

    #[test]
    fn probe_direction_check_agrees() {
        let params = quadratic_params();
        let err = finite_diff_check_probes(&params, 1e-4, 8, 42, &quadratic_build).unwrap();
        assert!(err <= 1e-7, "max rel err {err}");
    }

    #[test]
    fn non_finite_loss_is_an_error() {
        let params = quadratic_params();
        // overflow the scalar so the loss value becomes infinite
        let res = finite_diff_check(&params, 1e-4, &|tape: &mut Tape<f64>, ids: &[VarId]| {
            let sq = tape.mul(ids[0], ids[0])?;
            let s = tape.sum(sq)?;
            let s = tape.scale(s, 1e308)?;
            tape.scale(s, 1e308)
        });
        assert!(res.is_err());
        assert!(finite_diff_check(&params, -1.0, &quadratic_build).is_err());
    }

    #[test]
    fn every_primitive_passes_at_1e6() {
        for report in gradcheck_suite(0x5eed) {
            assert!(
                report.passed(),
                "{}: {} > {}",
                report.name,
                report.max_rel_err,
                report.tolerance
            );
        }
    }

    #[test]
    fn suite_is_deterministic() {
        let a = gradcheck_suite(0x5eed);
        let b = gradcheck_suite(0x5eed);
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.name, y.name);
            assert_eq!(x.max_rel_err, y.max_rel_err);
        }
    }
}
