pub mod activate;
pub mod distort;
pub mod fit;
pub mod group;
pub mod reliability;
pub mod simulate;
