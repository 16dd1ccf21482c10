pub mod tensor;
pub mod attention;
pub mod flops;
pub mod store;
pub mod harness;
pub mod serving;
