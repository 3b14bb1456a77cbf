pub mod correct;
pub mod emfit;
pub mod estimate;
pub mod evaluate;
pub mod optimize;
pub mod simulate;
