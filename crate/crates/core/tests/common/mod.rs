#![allow(dead_code)]

pub mod femo_cases;
pub mod formats;
pub mod pipeline;
pub mod fixtures;
pub mod rank_oracle;
pub mod simo_oracle;
