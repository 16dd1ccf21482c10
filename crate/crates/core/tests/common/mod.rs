#![allow(dead_code)]

pub mod gradcheck;
pub mod reference;
pub mod store_model;
pub mod wire;
