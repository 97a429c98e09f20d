//! Maps library errors onto the process exit codes.

use std::fmt;
use std::process::ExitCode;

use vsp_core::augment::AugmentError;
use vsp_core::config::ConfigError;
use vsp_core::gradcam::GradCamError;
use vsp_core::image::ImageError;
use vsp_core::metrics::MetricsError;
use vsp_core::net::NetError;
use vsp_core::scene::{DatasetError, RenderError};
use vsp_core::tensor::TensorError;
use vsp_core::train::TrainError;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Kind {
    /// Bad flag, config value or dataset contents: exit 2.
    Config,
    /// Missing, unreadable or corrupt file: exit 3.
    Io,
    /// Non-finite loss or activation: exit 4.
    Numeric,
}

impl Kind {
    pub fn code(self) -> u8 {
        match self {
            Kind::Config => 2,
            Kind::Io => 3,
            Kind::Numeric => 4,
        }
    }
}

#[derive(Debug)]
pub struct Failure {
    pub kind: Kind,
    pub message: String,
}

impl Failure {
    pub fn config(message: impl Into<String>) -> Self {
        Self {
            kind: Kind::Config,
            message: message.into(),
        }
    }

    pub fn exit_code(&self) -> ExitCode {
        ExitCode::from(self.kind.code())
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

fn tensor_kind(e: &TensorError) -> Kind {
    match e {
        TensorError::NonFinite { .. } => Kind::Numeric,
        _ => Kind::Config,
    }
}

fn net_kind(e: &NetError) -> Kind {
    match e {
        NetError::Tensor(t) => tensor_kind(t),
        _ => Kind::Config,
    }
}

fn image_kind(e: &ImageError) -> Kind {
    match e {
        ImageError::Size { .. } | ImageError::Channels(_) => Kind::Config,
        _ => Kind::Io,
    }
}

fn dataset_kind(e: &DatasetError) -> Kind {
    match e {
        DatasetError::Config { .. } | DatasetError::Render(_) => Kind::Config,
        DatasetError::Image(i) => image_kind(i),
        DatasetError::Io { .. } | DatasetError::Manifest { .. } => Kind::Io,
    }
}

macro_rules! from_error {
    ($ty:ty, $kind:expr) => {
        impl From<$ty> for Failure {
            fn from(e: $ty) -> Self {
                #[allow(clippy::redundant_closure_call)]
                let kind = ($kind)(&e);
                Failure {
                    kind,
                    message: e.to_string(),
                }
            }
        }
    };
}

from_error!(DatasetError, dataset_kind);
from_error!(ImageError, image_kind);
from_error!(NetError, net_kind);
from_error!(TensorError, tensor_kind);
from_error!(RenderError, |_: &RenderError| Kind::Config);
from_error!(AugmentError, |_: &AugmentError| Kind::Config);
from_error!(ConfigError, |e: &ConfigError| match e {
    ConfigError::Io { .. } => Kind::Io,
    _ => Kind::Config,
});
from_error!(TrainError, |e: &TrainError| match e {
    TrainError::NonFinite { .. } => Kind::Numeric,
    TrainError::Checkpoint(_) | TrainError::Version { .. } | TrainError::Io { .. } => Kind::Io,
    TrainError::Net(n) => net_kind(n),
    TrainError::Tensor(t) => tensor_kind(t),
    TrainError::Config(_) | TrainError::EmptyCells(_) | TrainError::NoSamples | TrainError::Augment(_) => Kind::Config,
});
from_error!(MetricsError, |e: &MetricsError| match e {
    MetricsError::Io { .. } => Kind::Io,
    MetricsError::Image(i) => image_kind(i),
    _ => Kind::Config,
});
from_error!(GradCamError, |e: &GradCamError| match e {
    GradCamError::Io { .. } => Kind::Io,
    GradCamError::Image(i) => image_kind(i),
    GradCamError::Net(n) => net_kind(n),
    GradCamError::Tensor(t) => tensor_kind(t),
    _ => Kind::Config,
});

pub fn io(path: &std::path::Path, e: std::io::Error) -> Failure {
    Failure {
        kind: Kind::Io,
        message: format!("{}: {e}", path.display()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn codes() {
        let f: Failure = TrainError::Checkpoint("bad magic".into()).into();
        assert_eq!(f.kind.code(), 3);
        let f: Failure = TrainError::NonFinite {
            epoch: 1,
            batch: 0,
            loss: f64::NAN,
            norms: vec![],
        }
        .into();
        assert_eq!(f.kind.code(), 4);
        let f: Failure = TrainError::Net(NetError::Tensor(TensorError::NonFinite { op: "conv2d" })).into();
        assert_eq!(f.kind, Kind::Numeric);
        let f: Failure = DatasetError::Config {
            flag: "az-step",
            msg: "7 does not divide 360".into(),
        }
        .into();
        assert_eq!(f.kind.code(), 2);
        let f: Failure = ConfigError::Io {
            path: "x".into(),
            msg: "missing".into(),
        }
        .into();
        assert_eq!(f.kind.code(), 3);
    }
}
