//! Evaluation of coefficient vectors as functions on `[0, 1]`.

use std::str::FromStr;

use crate::error::CliError;

/// Orthonormal bases of `L²(0, 1)`, indexed from mode 1.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Basis {
    /// `e_1 = 1`, `e_j(t) = √2 cos((j − 1)πt)`.
    Cosine,
    /// `e_1 = 1`, `e_{2k}(t) = √2 cos(2πkt)`, `e_{2k+1}(t) = √2 sin(2πkt)`.
    Fourier,
}

impl FromStr for Basis {
    type Err = CliError;

    fn from_str(s: &str) -> Result<Self, CliError> {
        match s {
            "cosine" => Ok(Basis::Cosine),
            "fourier" => Ok(Basis::Fourier),
            other => Err(CliError::Config {
                path: "basis".into(),
                message: format!("unknown basis {other:?}; expected \"cosine\" or \"fourier\""),
            }),
        }
    }
}

impl Basis {
    /// `e_j(t)` for mode `j ≥ 1`.
    pub fn eval(self, j: usize, t: f64) -> f64 {
        use std::f64::consts::{PI, SQRT_2};
        if j <= 1 {
            return 1.0;
        }
        match self {
            Basis::Cosine => SQRT_2 * ((j - 1) as f64 * PI * t).cos(),
            Basis::Fourier => {
                let k = (j / 2) as f64;
                if j % 2 == 0 {
                    SQRT_2 * (2.0 * PI * k * t).cos()
                } else {
                    SQRT_2 * (2.0 * PI * k * t).sin()
                }
            }
        }
    }
}

/// `(t_i, Σ_j x_j e_j(t_i))` on the midpoints `t_i = (i + ½)/points`.
pub fn render_field(x: &[f64], basis: Basis, points: usize) -> Result<Vec<(f64, f64)>, CliError> {
    if points == 0 {
        return Err(CliError::Config {
            path: "points".into(),
            message: "must be positive".into(),
        });
    }
    Ok((0..points)
        .map(|i| {
            let t = (i as f64 + 0.5) / points as f64;
            let u = x.iter().enumerate().map(|(j, v)| v * basis.eval(j + 1, t)).sum();
            (t, u)
        })
        .collect())
}

/// Midpoint-rule `L²` norm of a rendered field.
pub fn grid_l2_norm(field: &[(f64, f64)]) -> f64 {
    (field.iter().map(|(_, u)| u * u).sum::<f64>() / field.len() as f64).sqrt()
}
