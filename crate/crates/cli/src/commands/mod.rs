pub mod attend;
pub mod bench;
pub mod eval;
pub mod finetune;
pub mod pretrain;
pub mod sweep;
pub mod synth;
