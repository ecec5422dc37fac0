#![allow(dead_code)]

pub mod nn_grad;
pub mod oracles;
