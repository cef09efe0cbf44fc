pub mod compare;
pub mod eval;
pub mod export;
pub mod gradcheck;
pub mod train;
