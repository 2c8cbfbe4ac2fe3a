pub mod agent;
pub mod dynamics;
pub mod frenetplan;
pub mod geom;
pub mod globalplan;
pub mod gridmap;
pub mod harness;
pub mod mprl;
pub mod simenv;
