pub mod augment;
pub mod config;
pub mod gradcheck;
pub mod gradcam;
pub mod image;
pub mod metrics;
pub mod net;
pub mod scene;
pub mod tensor;
pub mod train;
pub mod viewsphere;

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    pub mod introduction {}
    #[doc = include_str!("../../../book/src/viewsphere.md")]
    pub mod viewsphere {}
    #[doc = include_str!("../../../book/src/tensors.md")]
    pub mod tensors {}
    #[doc = include_str!("../../../book/src/network.md")]
    pub mod network {}
    #[doc = include_str!("../../../book/src/scenes.md")]
    pub mod scenes {}
    #[doc = include_str!("../../../book/src/augmentation.md")]
    pub mod augmentation {}
    #[doc = include_str!("../../../book/src/training.md")]
    pub mod training {}
    #[doc = include_str!("../../../book/src/evaluation.md")]
    pub mod evaluation {}
    #[doc = include_str!("../../../book/src/gradcam.md")]
    pub mod gradcam {}
    #[doc = include_str!("../../../book/src/cli.md")]
    pub mod cli {}
}
