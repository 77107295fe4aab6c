//! Oracles shared by the integration and acceptance tests.
#![allow(unused_imports)]

pub use sosfwi::oracles::{cylinder_contrast, cylinder_total_field, dense_apply, dense_radiate, rel_l2};
