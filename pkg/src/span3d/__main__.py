from span3d.cli import main

raise SystemExit(main())
