import os
import sys

# Add project root to path
sys.path.append(os.path.dirname(os.path.abspath(__file__)))

from multifamm.cli import main


def run():
    print("🧠 Fitting the bundled toy dataset...")

    config_path = 'data/toy/config.json'
    if not os.path.exists(config_path):
        print("❌ data/toy/config.json not found")
        return 3

    code = main(["fit", "--config", config_path, "--output", "output/toy"])
    if code == 0:
        print("✅ Artifacts written to output/toy")
    return code


if __name__ == "__main__":
    sys.exit(run())
