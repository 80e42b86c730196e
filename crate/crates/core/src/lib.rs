pub mod diffcore;
pub mod eval;
pub mod graphgen;
pub mod ingest;
pub mod model;
pub mod oracle;
pub mod par;
pub mod selfcheck;
pub mod trainer;
