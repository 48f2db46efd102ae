pub mod corpus;
pub mod numerics;
pub mod embed;
pub mod scorer;
pub mod eval;
pub mod train;
pub mod synth;
pub mod recommend;
