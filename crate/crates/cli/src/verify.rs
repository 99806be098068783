use std::path::PathBuf;

use acvae_core::{Dataset, Split};
use clap::Args;

use crate::failure::{CliResult, Failure};

const EXPECTED_TRAIN: usize = 60_000;
const EXPECTED_TEST: usize = 10_000;

#[derive(Args)]
pub struct VerifyArgs {
    #[arg(long, default_value = "data/mnist")]
    data: PathBuf,
}

pub fn cmd_verify_data(args: &VerifyArgs) -> CliResult<()> {
    let train = Dataset::load(&args.data, Split::Train).map_err(Failure::data)?;
    let test = Dataset::load(&args.data, Split::Test).map_err(Failure::data)?;
    println!("train={} test={}", train.len(), test.len());
    for (name, ds) in [("train", &train), ("test", &test)] {
        let h = ds.class_histogram().map(|c| c.to_string());
        println!("{name} classes: {}", h.join(" "));
    }
    if (train.len(), test.len()) != (EXPECTED_TRAIN, EXPECTED_TEST) {
        return Err(Failure::data(format!(
            "expected train={EXPECTED_TRAIN} test={EXPECTED_TEST}, found train={} test={}",
            train.len(),
            test.len()
        )));
    }
    Ok(())
}
