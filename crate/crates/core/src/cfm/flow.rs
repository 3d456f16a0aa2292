use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::field::ConditioningBundle;
use super::CfmError;
use crate::nn::{Grads, Mat, ParamStore, Tape, Var};

/// One training draw for an item: noise, time, interpolant and target field.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowSample {
    pub x0: Mat,
    pub x1: Mat,
    pub t: f64,
    pub phi: Mat,
    pub omega: Mat,
}

fn same_shape(a: &Mat, b: &Mat) -> Result<(), CfmError> {
    if a.raw_dim() != b.raw_dim() {
        return Err(CfmError::Shape(format!("{:?} vs {:?}", a.shape(), b.shape())));
    }
    Ok(())
}

/// `φ_t = (1 − (1−σ)t)·X0 + t·X1`.
pub fn ot_flow(x0: &Mat, x1: &Mat, t: f64, sigma: f64) -> Result<Mat, CfmError> {
    same_shape(x0, x1)?;
    if !(0.0..=1.0).contains(&t) {
        return Err(CfmError::Time(t));
    }
    let a = 1.0 - (1.0 - sigma) * t;
    Ok(x0 * a + x1 * t)
}

/// `ω = X1 − (1−σ)·X0`, the time derivative of [`ot_flow`].
pub fn target_field(x0: &Mat, x1: &Mat, sigma: f64) -> Result<Mat, CfmError> {
    same_shape(x0, x1)?;
    Ok(x1 - &(x0 * (1.0 - sigma)))
}

pub fn standard_normal<R: Rng>(rows: usize, cols: usize, rng: &mut R) -> Mat {
    Mat::from_shape_simple_fn((rows, cols), || StandardNormal.sample(rng))
}

/// Draws `t ~ U[0,1)` and `X0 ~ N(0, I)` for one item.
pub fn draw_flow<R: Rng>(x1: &Mat, sigma: f64, rng: &mut R) -> FlowSample {
    let t = rng.gen::<f64>();
    let x0 = standard_normal(x1.nrows(), x1.ncols(), rng);
    flow_sample(x0, x1.clone(), t, sigma).expect("shapes agree by construction")
}

pub fn flow_sample(x0: Mat, x1: Mat, t: f64, sigma: f64) -> Result<FlowSample, CfmError> {
    let phi = ot_flow(&x0, &x1, t, sigma)?;
    let omega = target_field(&x0, &x1, sigma)?;
    Ok(FlowSample { x0, x1, t, phi, omega })
}

/// Time-dependent vector field for ODE integration.
pub trait VectorField {
    fn velocity(&self, x: &Mat, t: f64) -> Result<Mat, CfmError>;
}

impl<F: Fn(&Mat, f64) -> Mat> VectorField for F {
    fn velocity(&self, x: &Mat, t: f64) -> Result<Mat, CfmError> {
        Ok(self(x, t))
    }
}

/// Forward Euler from `t = 0` to `t = 1` in `n_steps` equal steps.
pub fn euler_integrate<F: VectorField + ?Sized>(field: &F, x0: Mat, n_steps: usize) -> Result<Mat, CfmError> {
    if n_steps == 0 {
        return Err(CfmError::Config("n_steps must be at least 1".into()));
    }
    let dt = 1.0 / n_steps as f64;
    let mut x = x0;
    for k in 0..n_steps {
        let v = field.velocity(&x, k as f64 * dt)?;
        x.scaled_add(dt, &v);
        if !x.iter().all(|v| v.is_finite()) {
            return Err(CfmError::NonFinite(format!("euler state at step {k}")));
        }
    }
    Ok(x)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossNorm {
    #[default]
    SquaredL2,
    L1,
}

/// Field that can be regressed onto the target field under conditioning.
pub trait ConditionalField {
    fn params(&self) -> &ParamStore;
    fn predict(&self, tape: &mut Tape, x_t: &Mat, t: f64, cond: &ConditioningBundle) -> Result<Var, CfmError>;
}

#[derive(Debug, Clone)]
pub struct CfmLossOutput {
    pub loss: f64,
    pub grads: Grads,
}

/// Mean over items and frames of `‖ω − ν(φ_t, t | cond)‖` with the chosen norm,
/// using the supplied draws.
pub fn cfm_loss_with_draws<F: ConditionalField + ?Sized>(
    field: &F,
    conds: &[&ConditioningBundle],
    draws: &[FlowSample],
    norm: LossNorm,
) -> Result<CfmLossOutput, CfmError> {
    if draws.is_empty() || draws.len() != conds.len() {
        return Err(CfmError::Config(format!("{} draws for {} items", draws.len(), conds.len())));
    }
    let mut grads = Grads::zeros_like(field.params());
    let mut loss = 0.0;
    let b = draws.len() as f64;
    for (d, cond) in draws.iter().zip(conds) {
        let mut tape = Tape::new(field.params());
        let v = field.predict(&mut tape, &d.phi, d.t, cond)?;
        if tape.value(v).raw_dim() != d.omega.raw_dim() {
            return Err(CfmError::Shape(format!("field output {:?} vs target {:?}", tape.value(v).shape(), d.omega.shape())));
        }
        let neg = tape.constant(-&d.omega);
        let diff = tape.add(v, neg);
        let scale = 1.0 / (b * d.omega.nrows() as f64);
        let l = match norm {
            LossNorm::SquaredL2 => tape.sum_squares(diff, scale),
            LossNorm::L1 => tape.sum_abs(diff, scale),
        };
        let value = tape.scalar(l);
        if !value.is_finite() {
            return Err(CfmError::NonFinite(format!("cfm loss at t={}", d.t)));
        }
        loss += value;
        tape.backward_into(l, 1.0, &mut grads);
    }
    Ok(CfmLossOutput { loss, grads })
}

/// Draws `t` and `X0` per item from `rng`, then evaluates [`cfm_loss_with_draws`].
pub fn cfm_loss<F: ConditionalField + ?Sized, R: Rng>(
    field: &F,
    batch: &[(&Mat, &ConditioningBundle)],
    sigma: f64,
    norm: LossNorm,
    rng: &mut R,
) -> Result<CfmLossOutput, CfmError> {
    let draws: Vec<FlowSample> = batch.iter().map(|(x1, _)| draw_flow(x1, sigma, rng)).collect();
    let conds: Vec<&ConditioningBundle> = batch.iter().map(|(_, c)| *c).collect();
    cfm_loss_with_draws(field, &conds, &draws, norm)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rand_mat(seed: u64) -> Mat {
        standard_normal(5, 3, &mut ChaCha8Rng::seed_from_u64(seed))
    }

    #[test]
    fn endpoints() {
        let (x0, x1) = (rand_mat(1), rand_mat(2));
        assert_eq!(ot_flow(&x0, &x1, 0.0, 1e-4).unwrap(), x0);
        assert_eq!(ot_flow(&x0, &x1, 1.0, 0.0).unwrap(), x1);
        let s = 0.3;
        let end = ot_flow(&x0, &x1, 1.0, s).unwrap();
        assert!((end - (&x0 * s + &x1)).iter().all(|v| v.abs() < 1e-15));
        assert!(ot_flow(&x0, &x1, 1.5, 0.0).is_err());
        assert!(ot_flow(&x0, &Mat::zeros((2, 2)), 0.5, 0.0).is_err());
    }

    #[test]
    fn target_field_special_cases() {
        let x1 = rand_mat(3);
        let zero = Mat::zeros((5, 3));
        assert_eq!(target_field(&zero, &x1, 1e-4).unwrap(), x1);
        assert_eq!(target_field(&rand_mat(4), &x1, 1.0).unwrap(), x1);
        let s = 0.25;
        let x0 = &x1 / (1.0 - s);
        assert!(target_field(&x0, &x1, s).unwrap().iter().all(|v| v.abs() < 1e-15));
    }

    #[test]
    fn constant_fields_integrate_exactly() {
        let x0 = rand_mat(5);
        let c = Mat::from_elem((5, 3), 0.75);
        let field = |_: &Mat, _: f64| Mat::from_elem((5, 3), 0.75);
        let expect = &x0 + &c;
        for n in [1, 10, 1000] {
            let out = euler_integrate(&field, x0.clone(), n).unwrap();
            assert!((&out - &expect).iter().all(|v| v.abs() < 1e-12));
        }
        assert!(euler_integrate(&field, x0, 0).is_err());
    }

    #[test]
    fn divergence_is_reported_with_step() {
        let field = |x: &Mat, _: f64| x.mapv(|v| v * 1e300);
        let err = euler_integrate(&field, Mat::from_elem((1, 1), 1e10), 3).unwrap_err();
        assert!(err.to_string().contains("step 0"));
    }
}
