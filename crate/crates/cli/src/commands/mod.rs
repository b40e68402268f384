pub mod bench;
pub mod fit;
pub mod reconstruct;
pub mod verify;
