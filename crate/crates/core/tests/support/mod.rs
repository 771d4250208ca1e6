#![allow(dead_code)]

pub mod gradients;
pub mod heston_mc;
