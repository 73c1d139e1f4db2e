pub mod ablation;
pub mod baselines;
pub mod container;
pub mod datastore;
pub mod envfam;
pub mod evalcli;
pub mod hyperzero;
pub mod numerics;
pub mod seeds;
pub mod solver;
