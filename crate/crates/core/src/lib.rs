pub mod cli;
pub mod feedback;
pub mod montecarlo;
pub mod problem;
pub mod report;
pub mod riccati;
pub mod symcone;
pub mod verify;
