use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::basis::BasisVector;
use crate::excitation::Multisine;

pub type FeedbackFn = Arc<dyn Fn(f64, &DVector<f64>) -> DVector<f64> + Send + Sync>;

/// State-feedback law evaluated at every integrator stage.
#[derive(Clone)]
pub enum ControlLaw {
    /// `u = -K sigma_u(x)`.
    Gain { k: DMatrix<f64>, sigma_u: BasisVector },
    /// Arbitrary `u(t, x)`.
    Feedback { input_dim: usize, f: FeedbackFn },
    /// `u = base(t, x) + u_p(t)`.
    Enriched { base: Box<ControlLaw>, probe: Multisine },
}

impl ControlLaw {
    pub fn gain(k: DMatrix<f64>, sigma_u: BasisVector) -> Self {
        ControlLaw::Gain { k, sigma_u }
    }

    pub fn feedback<F>(input_dim: usize, f: F) -> Self
    where
        F: Fn(f64, &DVector<f64>) -> DVector<f64> + Send + Sync + 'static,
    {
        ControlLaw::Feedback {
            input_dim,
            f: Arc::new(f),
        }
    }

    pub fn zero(input_dim: usize) -> Self {
        ControlLaw::feedback(input_dim, move |_, _| DVector::zeros(input_dim))
    }

    pub fn enriched(self, probe: Multisine) -> Self {
        ControlLaw::Enriched {
            base: Box::new(self),
            probe,
        }
    }

    pub fn input_dim(&self) -> usize {
        match self {
            ControlLaw::Gain { k, .. } => k.nrows(),
            ControlLaw::Feedback { input_dim, .. } => *input_dim,
            ControlLaw::Enriched { base, .. } => base.input_dim(),
        }
    }

    pub fn eval(&self, t: f64, x: &DVector<f64>) -> DVector<f64> {
        match self {
            ControlLaw::Gain { k, sigma_u } => -(k * sigma_u.eval(x)),
            ControlLaw::Feedback { f, .. } => f(t, x),
            ControlLaw::Enriched { base, probe } => base.eval(t, x) + probe.eval(t),
        }
    }
}

impl fmt::Debug for ControlLaw {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ControlLaw::Gain { k, sigma_u } => {
                write!(f, "Gain {{ k: {k:?}, sigma_u: [{sigma_u}] }}")
            }
            ControlLaw::Feedback { input_dim, .. } => write!(f, "Feedback {{ input_dim: {input_dim} }}"),
            ControlLaw::Enriched { base, probe } => {
                write!(f, "Enriched {{ base: {base:?}, probe: {probe:?} }}")
            }
        }
    }
}
