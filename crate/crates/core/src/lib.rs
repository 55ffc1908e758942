pub mod diffnet;
pub mod fdsolver;
pub mod gridmodel;
pub mod harness;
pub mod losses;
pub mod meta;
pub mod optim;
pub mod specfun;
