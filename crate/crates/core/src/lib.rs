pub mod arch;
pub mod workload;
pub mod costmodel;
pub mod layermapper;
pub mod nsga2;
pub mod scheduler;
pub mod sysmodel;
pub mod engine;
