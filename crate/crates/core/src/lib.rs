pub mod codec;
pub mod crypto;
pub mod csi2;
pub mod enclave;
pub mod harness;
pub mod imaging;
pub mod keystore;
pub mod pipeline;
pub mod protection;
pub mod provenance;
pub mod selftest;
pub mod sensor;
pub mod session;
