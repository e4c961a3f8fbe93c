//! Non-parametric temporal-difference learning in a reproducing kernel
//! Hilbert space, together with an independent spectral oracle for the
//! circle restart chain.
//!
//! The crate has four layers:
//!
//! * [`kernels`]: periodic Sobolev spline kernels, the Dirac kernel,
//!   dense kernel matrices and pivoted incomplete Cholesky factors;
//! * [`mrp`]: the circle restart chain, with sampling, rewards, the
//!   closed-form value function, a Monte-Carlo rollout oracle and a
//!   mixing diagnostic;
//! * [`td`]: the regularized TD(0) coefficient recursion with projection,
//!   thinned sampling and iterate averaging, plus the step-size schedules;
//! * [`spectral`]: truncated Fourier representations of the covariance
//!   operators and regularized fixed points, used as ground truth for
//!   everything above.
//!
//! [`verify`] bundles the cross-module consistency checks into a single
//! report for the experiment harness.
//!
//! # Quick start
//!
//! ```
//! use kernel_td::kernels::KernelSpec;
//! use kernel_td::mrp::{MrpModel, Reward};
//! use kernel_td::rng::derive_rng;
//! use kernel_td::td::{l2_error, td_run, SamplingMode, Setting, TdRunOptions, TdSchedule};
//!
//! let model = MrpModel::new(0.8, 0.5, Reward::Cos).unwrap();
//! let kernel = KernelSpec::sobolev(1).unwrap();
//! let schedule = TdSchedule::new(Setting::ExpAveraged, 1.0, 512, 1.0).unwrap();
//! let mut rng = derive_rng(0, &[1]);
//!
//! let history = td_run(
//!     &model,
//!     kernel,
//!     &schedule,
//!     SamplingMode::Iid,
//!     TdRunOptions::default(),
//!     &mut rng,
//! )
//! .unwrap();
//! let error = l2_error(&history.averaged(&schedule), &model, 128);
//! assert!(error < 0.05);
//! ```

pub mod error;
pub mod kernels;
pub mod mrp;
pub mod rng;
pub mod spectral;
pub mod td;
pub mod verify;

pub use error::{Error, Result};
