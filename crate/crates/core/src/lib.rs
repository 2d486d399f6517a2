#![doc = include_str!("../README.md")]

pub mod analysis;
pub mod data;
pub mod error;
pub mod experiment;
pub mod gcnn;
pub mod group;
pub mod linalg;
pub mod repr;

pub use error::{Error, Result};
pub use group::{cyclic_group, dihedral_group, direct_product, group_from_table, quaternion_group, GroupTable};
