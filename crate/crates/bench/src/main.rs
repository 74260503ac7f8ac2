use lsattn_bench::alloc::TrackingAllocator;

#[global_allocator]
static ALLOC: TrackingAllocator = TrackingAllocator;

fn main() {
    std::process::exit(lsattn_bench::cli_main(std::env::args_os()));
}
