import subprocess
import sys
import time
import argparse

def run_fit_and_get_time(data_path, model, iterations):
    command = [
        sys.executable,
        "src/main.py",
        "fit",
        "--data",
        data_path,
        "--model",
        model,
        "--seed",
        "1",
        "--iterations",
        str(iterations),
        "--output",
        "output/loop",
    ]
    start_time = time.time()
    subprocess.run(command, capture_output=True, text=True)
    end_time = time.time()
    execution_time = end_time - start_time
    return f"{execution_time:.7f}"

if __name__ == "__main__":
    parser = argparse.ArgumentParser(description="Fit a dataset multiple times and measure execution time.")
    parser.add_argument("-n", type=int, default=10, help="Number of fits.")
    parser.add_argument("--data", default="data/simulated/setting_I_n500_seed1", help="Dataset prefix.")
    parser.add_argument("--model", default="extJMIRT", help="extJMIRT or simpleJMIRT.")
    parser.add_argument("--iterations", type=int, default=10000, help="Sampling iterations I.")
    args = parser.parse_args()

    for i in range(args.n):
        execution_time = run_fit_and_get_time(args.data, args.model, args.iterations)
        print("Run #" + str(i + 1) + ": " + str(execution_time))
