#![allow(dead_code)]

pub mod grads;
pub mod kernels;
