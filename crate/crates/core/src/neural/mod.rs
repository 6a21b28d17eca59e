//! Minimal dense network stack with exact reverse-mode gradients.

mod adam;
pub mod checkpoint;
mod matrix;
mod network;
mod params;
mod quasimetric;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use matrix::Matrix;
pub use network::{swish, Activation, Layer, Network, NetworkBuilder, OutputInit, Tape, LAYER_NORM_EPS};
pub use params::{ParamId, ParamSet, TensorSpec};
pub(crate) use quasimetric::accumulate_grad as quasimetric_accumulate;
pub use quasimetric::{quasimetric_distance, quasimetric_distance_grad};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ArchKind {
    /// Single network mapping `(state, goal)` to one score per action.
    Mlp256,
    /// Same interface as `Mlp256` with a residual trunk.
    ResNetLarge,
    /// `phi(state, action)` and `psi(goal)` encoders.
    TwinEncoder,
    /// Twin encoders compared with a quasimetric.
    QuasimetricEncoder,
}

impl ArchKind {
    pub fn is_encoder(self) -> bool {
        matches!(self, ArchKind::TwinEncoder | ArchKind::QuasimetricEncoder)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Trunk {
    Mlp {
        hidden: Vec<usize>,
    },
    ResNet {
        width: usize,
        blocks: usize,
        layers_per_block: usize,
    },
}

impl Trunk {
    /// Two hidden layers of 256 units.
    pub fn mlp256() -> Self {
        Trunk::Mlp { hidden: vec![256, 256] }
    }

    /// Two residual blocks of four 1024-unit layers.
    pub fn resnet_large() -> Self {
        Trunk::ResNet {
            width: 1024,
            blocks: 2,
            layers_per_block: 4,
        }
    }

    fn build<S: Scalar, R: Rng + ?Sized>(
        &self,
        params: &mut ParamSet<S>,
        rng: &mut R,
        prefix: &str,
        input_dim: usize,
        output_dim: usize,
        init: OutputInit,
    ) -> Result<Network> {
        let b = NetworkBuilder::new(params, rng, prefix);
        match self {
            Trunk::Mlp { hidden } => b.mlp(input_dim, hidden, output_dim, Activation::Swish, init),
            Trunk::ResNet {
                width,
                blocks,
                layers_per_block,
            } => b.resnet(input_dim, *width, *blocks, *layers_per_block, output_dim, init),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArchSpec {
    pub kind: ArchKind,
    pub trunk: Trunk,
    /// Head input width, or the state-action encoder input width.
    pub input_dim: usize,
    /// Goal encoder input width (encoder kinds only).
    pub goal_dim: usize,
    /// Head output width (encoder kinds: unused).
    pub output_dim: usize,
    pub repr_dim: usize,
}

impl ArchSpec {
    pub fn mlp256(input_dim: usize, output_dim: usize) -> Self {
        ArchSpec {
            kind: ArchKind::Mlp256,
            trunk: Trunk::mlp256(),
            input_dim,
            goal_dim: 0,
            output_dim,
            repr_dim: 0,
        }
    }

    pub fn resnet_large(input_dim: usize, output_dim: usize) -> Self {
        ArchSpec {
            kind: ArchKind::ResNetLarge,
            trunk: Trunk::resnet_large(),
            input_dim,
            goal_dim: 0,
            output_dim,
            repr_dim: 0,
        }
    }

    pub fn twin_encoder(input_dim: usize, goal_dim: usize, repr_dim: usize) -> Self {
        ArchSpec {
            kind: ArchKind::TwinEncoder,
            trunk: Trunk::mlp256(),
            input_dim,
            goal_dim,
            output_dim: 0,
            repr_dim,
        }
    }

    pub fn quasimetric_encoder(input_dim: usize, goal_dim: usize, repr_dim: usize) -> Self {
        ArchSpec {
            kind: ArchKind::QuasimetricEncoder,
            ..Self::twin_encoder(input_dim, goal_dim, repr_dim)
        }
    }

    pub fn with_trunk(mut self, trunk: Trunk) -> Self {
        self.trunk = trunk;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 {
            return Err(Error::Shape("input_dim must be positive".into()));
        }
        if self.kind.is_encoder() {
            if self.goal_dim == 0 || self.repr_dim == 0 {
                return Err(Error::Shape("encoders need goal_dim and repr_dim".into()));
            }
            if self.kind == ArchKind::QuasimetricEncoder && self.repr_dim % 2 != 0 {
                return Err(Error::Shape("quasimetric repr_dim must be even".into()));
            }
        } else if self.output_dim == 0 {
            return Err(Error::Shape("output_dim must be positive".into()));
        }
        Ok(())
    }
}

/// Networks of one critic; all tensors live in a single [`ParamSet`].
#[derive(Clone, Debug)]
pub enum CriticNet {
    Head(Network),
    Twin { sa: Network, goal: Network },
}

/// Builds the critic networks and their freshly initialized parameters.
/// Score heads get a zero-initialized output layer; encoders do not, since
/// two all-zero encoders would have zero gradient.
pub fn build_critic<S: Scalar, R: Rng + ?Sized>(arch: &ArchSpec, rng: &mut R) -> Result<(CriticNet, ParamSet<S>)> {
    arch.validate()?;
    let mut params = ParamSet::new();
    let net = if arch.kind.is_encoder() {
        let sa = arch
            .trunk
            .build(&mut params, rng, "sa", arch.input_dim, arch.repr_dim, OutputInit::FanIn)?;
        let goal = arch.trunk.build(
            &mut params,
            rng,
            "goal",
            arch.goal_dim,
            arch.repr_dim,
            OutputInit::FanIn,
        )?;
        CriticNet::Twin { sa, goal }
    } else {
        CriticNet::Head(
            arch.trunk
                .build(&mut params, rng, "q", arch.input_dim, arch.output_dim, OutputInit::Zero)?,
        )
    };
    Ok((net, params))
}
