#![allow(dead_code)]

pub mod gradcheck;
pub mod lemma;
pub mod oracle;
