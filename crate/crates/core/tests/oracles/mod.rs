#![allow(dead_code)]

pub mod forward;
pub mod gradient;
