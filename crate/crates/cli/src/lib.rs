//! Pipeline orchestration and report emission behind the `revpic`
//! command line tool.

pub mod config;
pub mod pipeline;
pub mod report;
