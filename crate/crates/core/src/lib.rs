pub mod tensor;
pub mod arch;
pub mod dosimetry;
pub mod losses;
pub mod persist;
pub mod phantom;
pub mod trainer;
