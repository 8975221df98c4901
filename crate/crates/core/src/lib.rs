pub mod approx;
pub mod compare;
pub mod domain;
pub mod formulation;
pub mod io;
pub mod model;
pub mod oracle;
pub mod routing;
pub mod schedule;
pub mod simulate;
pub mod solve;
pub mod synthetic;
pub mod tier;
