"""darb runner: the `darb` console script with a local .env."""
import sys

from dotenv import load_dotenv

load_dotenv()

if __name__ == "__main__":
    from darb.main import main

    print("📡 darb — random-beam RIS simulator")
    sys.exit(main())
