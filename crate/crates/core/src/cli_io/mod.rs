//! File formats, run configuration and the command-line front end.

pub(crate) mod bytes;
mod cli;
mod codecs;
mod config;
mod container;
mod results;

pub use cli::run;
pub use codecs::{
    actv_payload_len, decode_activations, decode_model, decode_task, decode_weights,
    encode_activations, encode_model, encode_task, encode_weights, ACTV_HEADER_BYTES,
};
pub use config::{RunConfig, SampleModeName};
pub use container::{
    decode_container, encode_container, read_container, single_section, write_container, Section,
    SectionTag, MAGIC,
};
pub use results::{
    emit_histogram_svg, emit_results_csv, parse_results_csv, render_histogram_svg,
    render_results_csv, report_rows, ResultRow, CSV_HEADER,
};
