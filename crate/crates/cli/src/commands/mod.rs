pub mod cluster;
pub mod evaluate;
pub mod gen_data;
pub mod score;
pub mod train;
