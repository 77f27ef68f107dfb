#![allow(dead_code)]

pub mod gradcheck;
pub mod metric_oracle;
pub mod planted;
pub mod identities;
