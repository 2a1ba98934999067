from asvmismatch.cli import main

raise SystemExit(main())
