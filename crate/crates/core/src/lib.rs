//! Incompressible staggered-grid flow solver with level-set interfaces, WALE
//! eddy viscosity, Cartesian domain decomposition and a strong-scaling harness.

pub mod cases;
pub mod exchange;
pub mod harness;
pub mod levelset;
pub mod mesh;
pub mod pressure;
pub mod schemes;
pub mod stepper;
pub mod turbulence;
