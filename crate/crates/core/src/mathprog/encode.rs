//! Piecewise-linear and one-hot gadgets.
//!
//! A piecewise-linear function with breakpoints `(x_i, y_i)` is encoded with
//! convex weights `lambda_i`, indicator binaries `b_i`, and the constraints
//!
//! ```text
//! sum lambda_i = 1      sum lambda_i x_i = input      sum lambda_i y_i = output
//! lambda_i <= b_i       sum b_i <= 2                  b_i + b_j <= 1  (|i - j| > 1)
//! ```
//!
//! The weights are also registered as an SOS2 group so branch-and-bound can
//! branch on the group directly.

use super::model::{ConstraintId, Model, Relation, VarId, VarKind};
use super::MathProgError;

/// Variables introduced by [`encode_piecewise`].
#[derive(Debug, Clone)]
pub struct PiecewiseVars {
    pub lambdas: Vec<VarId>,
    pub indicators: Vec<VarId>,
}

/// Breakpoints of the saturating sigmoid approximation.
///
/// With `count = 4` these are `(f_lower, 0), (-3, 0.05), (3, 0.95), (f_upper, 1)`.
/// Larger counts insert points on `[-3, 3]` that follow the logistic curve,
/// rescaled so that the values at `-3` and `3` stay at 0.05 and 0.95.
pub fn sigmoid_breakpoints(f_lower: f64, f_upper: f64, count: usize) -> Result<Vec<(f64, f64)>, MathProgError> {
    if !(f_lower < -3.0 && f_upper > 3.0) {
        return Err(MathProgError::Precondition(format!(
            "sigmoid range [{f_lower}, {f_upper}] must strictly contain [-3, 3]"
        )));
    }
    if count < 4 {
        return Err(MathProgError::Precondition("sigmoid needs at least 4 breakpoints".into()));
    }
    let logistic = |x: f64| 1.0 / (1.0 + (-x).exp());
    let (s_lo, s_hi) = (logistic(-3.0), logistic(3.0));
    let inner = count - 2;
    let mut pts = vec![(f_lower, 0.0)];
    for i in 0..inner {
        let x = -3.0 + 6.0 * i as f64 / (inner - 1) as f64;
        let y = if i == 0 {
            0.05
        } else if i == inner - 1 {
            0.95
        } else {
            0.05 + 0.9 * (logistic(x) - s_lo) / (s_hi - s_lo)
        };
        pts.push((x, y));
    }
    pts.push((f_upper, 1.0));
    Ok(pts)
}

/// Adds `output = f(input)` for the piecewise-linear `f` through `breakpoints`.
pub fn encode_piecewise(
    model: &mut Model,
    name: &str,
    input: VarId,
    output: VarId,
    breakpoints: &[(f64, f64)],
) -> Result<PiecewiseVars, MathProgError> {
    if breakpoints.len() < 2 {
        return Err(MathProgError::Precondition("piecewise function needs two breakpoints".into()));
    }
    if breakpoints.windows(2).any(|w| w[1].0 <= w[0].0) {
        return Err(MathProgError::Precondition("breakpoints must be strictly increasing in x".into()));
    }
    if breakpoints.iter().any(|&(x, y)| !x.is_finite() || !y.is_finite()) {
        return Err(MathProgError::NonFinite(format!("breakpoints of {name}")));
    }
    let k = breakpoints.len();
    let mut lambdas = Vec::with_capacity(k);
    let mut indicators = Vec::with_capacity(k);
    for i in 0..k {
        lambdas.push(model.add_var(format!("{name}_lambda{i}"), 0.0, 1.0)?);
        indicators.push(model.add_binary(format!("{name}_b{i}")));
    }
    let ones: Vec<_> = lambdas.iter().map(|&l| (l, 1.0)).collect();
    model.add_constraint(format!("{name}_convex"), &ones, Relation::Eq, 1.0)?;

    let mut x_terms: Vec<_> = lambdas.iter().zip(breakpoints).map(|(&l, &(x, _))| (l, x)).collect();
    x_terms.push((input, -1.0));
    model.add_constraint(format!("{name}_input"), &x_terms, Relation::Eq, 0.0)?;

    let mut y_terms: Vec<_> = lambdas.iter().zip(breakpoints).map(|(&l, &(_, y))| (l, y)).collect();
    y_terms.push((output, -1.0));
    model.add_constraint(format!("{name}_output"), &y_terms, Relation::Eq, 0.0)?;

    for i in 0..k {
        model.add_constraint(
            format!("{name}_link{i}"),
            &[(lambdas[i], 1.0), (indicators[i], -1.0)],
            Relation::Le,
            0.0,
        )?;
    }
    let b_ones: Vec<_> = indicators.iter().map(|&b| (b, 1.0)).collect();
    model.add_constraint(format!("{name}_pair"), &b_ones, Relation::Le, 2.0)?;
    for i in 0..k {
        for j in i + 2..k {
            model.add_constraint(
                format!("{name}_adj{i}_{j}"),
                &[(indicators[i], 1.0), (indicators[j], 1.0)],
                Relation::Le,
                1.0,
            )?;
        }
    }
    model.add_sos2(&lambdas)?;
    Ok(PiecewiseVars { lambdas, indicators })
}

/// Adds `output = sigmoid(input)` using the four-breakpoint approximation.
pub fn encode_sigmoid(
    model: &mut Model,
    name: &str,
    input: VarId,
    output: VarId,
    f_lower: f64,
    f_upper: f64,
) -> Result<PiecewiseVars, MathProgError> {
    let pts = sigmoid_breakpoints(f_lower, f_upper, 4)?;
    encode_piecewise(model, name, input, output, &pts)
}

/// Adds the one-hot constraint `sum vars = 1` over binary category indicators.
pub fn encode_categorical(model: &mut Model, name: &str, vars: &[VarId]) -> Result<ConstraintId, MathProgError> {
    if vars.len() < 2 {
        return Err(MathProgError::Precondition("categorical encoding needs at least two indicators".into()));
    }
    if let Some(v) = vars.iter().find(|&&v| v.index() >= model.num_vars() || model.var(v).kind != VarKind::Binary) {
        return Err(MathProgError::Precondition(format!("variable {} is not a binary indicator", v.index())));
    }
    let terms: Vec<_> = vars.iter().map(|&v| (v, 1.0)).collect();
    model.add_constraint(format!("{name}_onehot"), &terms, Relation::Eq, 1.0)
}

/// Evaluates the piecewise-linear interpolant through `breakpoints` at `x`, clamped to the end values.
pub fn interpolate(breakpoints: &[(f64, f64)], x: f64) -> f64 {
    let first = breakpoints[0];
    let last = breakpoints[breakpoints.len() - 1];
    if x <= first.0 {
        return first.1;
    }
    if x >= last.0 {
        return last.1;
    }
    let i = breakpoints.partition_point(|&(bx, _)| bx <= x) - 1;
    let (x0, y0) = breakpoints[i];
    let (x1, y1) = breakpoints[i + 1];
    y0 + (y1 - y0) * (x - x0) / (x1 - x0)
}
