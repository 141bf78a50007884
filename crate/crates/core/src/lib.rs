//! Local path planning for car-like vehicles on occupancy grids.
//!
//! Paths are chains of quintic segments ([`spline`]). A convolutional policy
//! ([`policy`]) emits one segment endpoint per call and is trained by
//! gradient descent on a differentiable feasibility loss ([`loss`]), using
//! reference paths from a state-lattice planner ([`lattice`]) only to push
//! colliding solutions out of obstacles.

pub mod dual;
pub mod gridmap;
pub mod kinematics;
pub mod loss;
pub mod spline;
pub mod lattice;
pub mod policy;
pub mod trainer;
