#![allow(dead_code)]

pub mod broker_props;
pub mod corpus;
pub mod oracle;
