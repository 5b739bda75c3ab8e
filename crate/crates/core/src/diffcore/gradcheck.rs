use super::{DiffError, ParamSet, Session, Tape, Tensor, Var};

/// `|a - c| / (|a| + |c| + 1e-12)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / (analytic.abs() + numeric.abs() + 1e-12)
}

/// Central-difference estimate of the gradient of a scalar function.
pub fn central_difference<F>(mut f: F, point: &Tensor, step: f64) -> Result<Tensor, DiffError>
where
    F: FnMut(&Tensor) -> Result<f64, DiffError>,
{
    if step <= 0.0 || !step.is_finite() {
        return Err(DiffError::BadStep(step));
    }
    let mut x = point.clone();
    let mut out = Vec::with_capacity(point.numel());
    for i in 0..point.numel() {
        let orig = x.data()[i];
        x.data_mut()[i] = orig + step;
        let hi = f(&x)?;
        x.data_mut()[i] = orig - step;
        let lo = f(&x)?;
        x.data_mut()[i] = orig;
        let d = (hi - lo) / (2.0 * step);
        if !d.is_finite() {
            return Err(DiffError::NonFinite("finite difference"));
        }
        out.push(d);
    }
    Tensor::new(point.dims(), out)
}

fn eval_scalar<F>(f: &mut F, x: &Tensor, leaf_grad: bool) -> Result<(f64, Option<Tensor>), DiffError>
where
    F: FnMut(&mut Tape, Var) -> Result<Var, DiffError>,
{
    let mut tape = Tape::new();
    let leaf = if leaf_grad {
        tape.param(x.clone())
    } else {
        tape.constant(x.clone())
    };
    let loss = f(&mut tape, leaf)?;
    let value = tape.value(loss).item();
    if !value.is_finite() {
        return Err(DiffError::NonFinite("finite-difference evaluation"));
    }
    if !leaf_grad {
        return Ok((value, None));
    }
    let grads = tape.backward(loss)?;
    Ok((value, grads.get(leaf).cloned()))
}

/// Maximum coordinate-wise relative error between the tape gradient of
/// `f` at `point` and a central difference with the given step.
///
/// `f` builds a rank-0 value from the leaf it is handed.
pub fn finite_diff_check<F>(mut f: F, point: &Tensor, step: f64) -> Result<f64, DiffError>
where
    F: FnMut(&mut Tape, Var) -> Result<Var, DiffError>,
{
    let (_, analytic) = eval_scalar(&mut f, point, true)?;
    let analytic = analytic.expect("leaf gradient");
    let numeric = central_difference(|x| eval_scalar(&mut f, x, false).map(|r| r.0), point, step)?;
    Ok(analytic
        .data()
        .iter()
        .zip(numeric.data())
        .map(|(&a, &n)| relative_error(a, n))
        .fold(0.0, f64::max))
}

/// [`finite_diff_check`] applied to every tensor of a parameter set, for a
/// loss built through a [`Session`].
pub fn finite_diff_check_params<F, E>(params: &ParamSet, mut f: F, step: f64) -> Result<f64, E>
where
    F: FnMut(&mut Session) -> Result<Var, E>,
    E: From<DiffError>,
{
    let analytic = {
        let mut s = Session::new(params);
        let loss = f(&mut s)?;
        s.backward(loss)?
    };
    let mut worst: f64 = 0.0;
    let mut scratch = params.clone();
    for id in params.ids() {
        let point = params.get(id).clone();
        let mut inner: Option<E> = None;
        let numeric = central_difference(
            |x| {
                *scratch.get_mut(id) = x.clone();
                let mut s = Session::frozen(&scratch);
                match f(&mut s) {
                    Ok(loss) => Ok(s.value(loss).item()),
                    Err(e) => {
                        inner = Some(e);
                        Err(DiffError::NonFinite("finite-difference evaluation"))
                    }
                }
            },
            &point,
            step,
        );
        if let Some(e) = inner {
            return Err(e);
        }
        let numeric = numeric?;
        *scratch.get_mut(id) = point;
        for (&a, &n) in analytic[id.index()].data().iter().zip(numeric.data()) {
            worst = worst.max(relative_error(a, n));
        }
    }
    Ok(worst)
}

/// Gradient check in a reduced coordinate system: the checked function is
/// `t -> loss(params + sum_k t_k d_k)` at `t = 0`, with `d_k` random unit
/// directions spanning every parameter. Each coordinate is then a
/// directional derivative, which stays well above the rounding floor of the
/// central difference even when individual parameter gradients are tiny.
pub fn finite_diff_check_directions<F, E>(
    params: &ParamSet,
    mut f: F,
    step: f64,
    directions: usize,
    seed: u64,
) -> Result<f64, E>
where
    F: FnMut(&mut Session) -> Result<Var, E>,
    E: From<DiffError>,
{
    use rand::SeedableRng;
    use rand_distr::{Distribution, StandardNormal};

    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let dirs: Vec<Vec<Vec<f64>>> = (0..directions)
        .map(|_| {
            let mut d: Vec<Vec<f64>> = params
                .values()
                .iter()
                .map(|t| (0..t.numel()).map(|_| StandardNormal.sample(&mut rng)).collect())
                .collect();
            let norm = d.iter().flatten().map(|v: &f64| v * v).sum::<f64>().sqrt();
            d.iter_mut().flatten().for_each(|v| *v /= norm);
            d
        })
        .collect();

    let grads = {
        let mut s = Session::new(params);
        let loss = f(&mut s)?;
        s.backward(loss)?
    };
    let analytic: Vec<f64> = dirs
        .iter()
        .map(|d| {
            d.iter()
                .zip(&grads)
                .map(|(dv, g)| dv.iter().zip(g.data()).map(|(a, b)| a * b).sum::<f64>())
                .sum()
        })
        .collect();

    let mut scratch = params.clone();
    let mut inner: Option<E> = None;
    let origin = Tensor::new(&[directions], vec![0.0; directions])?;
    let numeric = central_difference(
        |t| {
            for (k, (dst, base)) in scratch.values_mut().iter_mut().zip(params.values()).enumerate() {
                let dst = dst.data_mut();
                dst.copy_from_slice(base.data());
                for (j, &tj) in t.data().iter().enumerate() {
                    if tj != 0.0 {
                        dst.iter_mut().zip(&dirs[j][k]).for_each(|(x, dv)| *x += tj * dv);
                    }
                }
            }
            let mut s = Session::frozen(&scratch);
            match f(&mut s) {
                Ok(loss) => Ok(s.value(loss).item()),
                Err(e) => {
                    inner = Some(e);
                    Err(DiffError::NonFinite("finite-difference evaluation"))
                }
            }
        },
        &origin,
        step,
    );
    if let Some(e) = inner {
        return Err(e);
    }
    Ok(analytic
        .iter()
        .zip(numeric?.data())
        .map(|(&a, &n)| relative_error(a, n))
        .fold(0.0, f64::max))
}
